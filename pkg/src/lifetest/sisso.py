"""Two-point features of difference curves and a +/- SISSO descriptor search.

A candidate is ``|y[i] - y[j]|`` for a pair of grid points ``i < j``.  Since
the only operators are ``+`` and ``-``, every expression built from
candidates is a signed sum of leaves; expressions are therefore kept in the
canonical form ``{(i, j): integer coefficient}``, which deduplicates
algebraically identical formulas for free.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ConstantTarget, EmptyFeasibleSet, GridMismatch, LengthMismatch
from .model import CurveKind, SampledCurve


@dataclass(frozen=True)
class TwoPointFeature:
    i: int
    j: int

    def __post_init__(self):
        if not 0 <= self.i < self.j:
            raise ConfigError(f"two-point feature needs 0 <= i < j, got ({self.i}, {self.j})")

    def value(self, y) -> float:
        return abs(float(y[self.i]) - float(y[self.j]))

    def __str__(self):
        return f"|y[{self.i}]-y[{self.j}]|"


@dataclass(frozen=True, eq=False)
class GridIdentity:
    kind: CurveKind
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", CurveKind(self.kind))
        x = np.array(self.x, dtype=float)
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    def __eq__(self, other):
        return (isinstance(other, GridIdentity) and self.kind == other.kind
                and np.array_equal(self.x, other.x))

    __hash__ = None

    def check(self, curve: SampledCurve) -> None:
        if curve.kind != self.kind or not np.array_equal(curve.x, self.x):
            raise GridMismatch(
                f"curve ({curve.kind.value}, {len(curve.x)} points) does not match "
                f"grid ({self.kind.value}, {len(self.x)} points)"
            )


def pair_indices(n: int) -> tuple:
    """All ``(i, j)`` with ``i < j`` in lexicographic order."""
    return np.triu_indices(n, k=1)


@dataclass(frozen=True, eq=False)
class CandidateFeatureSet:
    grid: GridIdentity
    pairs_i: np.ndarray
    pairs_j: np.ndarray
    matrix: np.ndarray  # rows = curves, columns = candidates

    @property
    def n_candidates(self) -> int:
        return len(self.pairs_i)

    def feature(self, col: int) -> TwoPointFeature:
        return TwoPointFeature(int(self.pairs_i[col]), int(self.pairs_j[col]))

    def column_of(self, i: int, j: int) -> int:
        n = len(self.grid.x)
        # offset of row i in the upper triangle, then the position of j
        return i * n - i * (i + 1) // 2 + (j - i - 1)


def two_point_values(y: np.ndarray, pairs_i, pairs_j) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return np.abs(y[..., pairs_i] - y[..., pairs_j])


def enumerate_two_point_features(curves: Sequence[SampledCurve]) -> CandidateFeatureSet:
    if not curves:
        raise ConfigError("need at least one curve")
    grid = GridIdentity(curves[0].kind, curves[0].x)
    for c in curves[1:]:
        grid.check(c)
    pi, pj = pair_indices(len(grid.x))
    Y = np.vstack([np.asarray(c.y, dtype=float) for c in curves])
    return CandidateFeatureSet(grid, pi, pj, two_point_values(Y, pi, pj))


# ------------------------------------------------------------- screening


def abs_correlations(V: np.ndarray, target: np.ndarray) -> np.ndarray:
    """|Pearson r| of every row of ``V`` against ``target``; NaN for constant rows."""
    t = np.asarray(target, dtype=float)
    tc = t - t.mean()
    tn = np.sqrt(tc @ tc)
    Vc = V - V.mean(axis=1, keepdims=True)
    vn = np.sqrt(np.einsum("ij,ij->i", Vc, Vc))
    constant = np.ptp(V, axis=1) == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.abs(Vc @ tc) / (vn * tn)
    r = np.minimum(r, 1.0)
    r[constant] = np.nan
    return r


def _rank(scores: np.ndarray, limit: int) -> np.ndarray:
    """Indices of the ``limit`` best finite scores, descending, ties by index."""
    idx = np.flatnonzero(np.isfinite(scores))
    order = idx[np.argsort(-scores[idx], kind="stable")]
    return order[:limit]


def _check_target(target, rows):
    t = np.asarray(target, dtype=float)
    if t.shape != (rows,):
        raise LengthMismatch(f"target has {t.shape[0] if t.ndim else 0} values, design has {rows} rows")
    if np.ptp(t) == 0:
        raise ConstantTarget("target is constant")
    return t


@dataclass(frozen=True)
class ScreenedFeature:
    column: int
    feature: TwoPointFeature
    score: float


def sis_screen(candidates: CandidateFeatureSet, target, screen_size: int) -> list:
    """Top ``screen_size`` candidates by |correlation| with ``target``."""
    t = _check_target(target, candidates.matrix.shape[0])
    scores = abs_correlations(candidates.matrix.T, t)
    return [ScreenedFeature(int(c), candidates.feature(int(c)), float(scores[c]))
            for c in _rank(scores, screen_size)]


# ------------------------------------------------------------- expressions


@dataclass(frozen=True, eq=False)
class Expression:
    """Signed sum of two-point features, with its values on the training rows."""

    terms: tuple  # ((i, j), coef) sorted by (i, j), coef != 0
    values: np.ndarray = field(repr=False)

    @property
    def key(self) -> tuple:
        return self.terms

    @property
    def n_leaves(self) -> int:
        return len(self.terms)

    def __str__(self):
        return format_terms(self.terms)


def format_terms(terms) -> str:
    parts = []
    for (i, j), coef in terms:
        leaf = f"|y[{i}]-y[{j}]|"
        sign = "+" if coef > 0 else "-"
        parts.extend([(sign, leaf)] * abs(coef))
    if not parts:
        return "0"
    text = ("-" if parts[0][0] == "-" else "") + parts[0][1]
    for sign, leaf in parts[1:]:
        text += f" {sign} {leaf}"
    return text


def _combine(a: tuple, b: tuple, sign: int) -> tuple:
    acc = dict(a)
    for leaf, coef in b:
        acc[leaf] = acc.get(leaf, 0) + sign * coef
    return tuple(sorted((k, v) for k, v in acc.items() if v != 0))


def primitive_pool(candidates: CandidateFeatureSet, screened: Sequence[ScreenedFeature]) -> list:
    return [Expression((((s.feature.i, s.feature.j), 1),), candidates.matrix[:, s.column].copy())
            for s in screened]


def expand(pool: Sequence[Expression], operators=("+", "-"), rounds: int = 2, target=None,
           screen_size: int = 50) -> list:
    """Grow ``pool`` by ``rounds`` rounds of pairwise +/- composition.

    Each round combines every unordered pair of the current pool with ``+``
    and both orders of ``-``, drops expressions already present (canonical
    form), screens the new ones against ``target`` and keeps the best
    ``screen_size``.  Returns the original pool followed by each round's
    survivors.
    """
    if not pool:
        raise ConfigError("pool must be nonempty")
    ops = set(operators)
    if not ops <= {"+", "-"}:
        raise ConfigError(f"unsupported operators {sorted(ops - {'+', '-'})}")
    out = list(pool)
    if rounds <= 0:
        return out
    t = _check_target(target, len(pool[0].values))
    seen = {e.key for e in out}
    for _ in range(rounds):
        P = len(out)
        V = np.vstack([e.values for e in out])
        ia, ib = np.triu_indices(P, k=1)
        blocks, specs = [], []
        if "+" in ops:
            blocks.append(V[ia] + V[ib])
            specs.append((ia, ib, 1))
        if "-" in ops:
            blocks.append(V[ia] - V[ib])
            specs.append((ia, ib, -1))
            blocks.append(V[ib] - V[ia])
            specs.append((ib, ia, -1))
        if not blocks:
            break
        vals = np.vstack(blocks)
        scores = abs_correlations(vals, t)
        left = np.concatenate([s[0] for s in specs])
        right = np.concatenate([s[1] for s in specs])
        sign = np.concatenate([np.full(len(s[0]), s[2]) for s in specs])
        survivors = []
        for idx in _rank(scores, len(scores)):
            terms = _combine(out[left[idx]].terms, out[right[idx]].terms, int(sign[idx]))
            if not terms or terms in seen:
                continue
            seen.add(terms)
            survivors.append(Expression(terms, vals[idx].copy()))
            if len(survivors) >= screen_size:
                break
        out.extend(survivors)
    return out


# ------------------------------------------------------------- selection


@dataclass(frozen=True, eq=False)
class FeatureFormula:
    """A selected descriptor with its 1-D least-squares calibration."""

    terms: tuple
    grid: GridIdentity
    slope: float
    intercept: float
    r2: float

    @property
    def expression(self) -> str:
        return format_terms(self.terms)

    @property
    def n_leaves(self) -> int:
        return len(self.terms)

    def __eq__(self, other):
        return (isinstance(other, FeatureFormula) and self.terms == other.terms
                and self.grid == other.grid and self.slope == other.slope
                and self.intercept == other.intercept and self.r2 == other.r2)

    __hash__ = None

    def values(self, Y) -> np.ndarray:
        """Raw descriptor values for rows of ``Y`` (curves' y on the grid)."""
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        out = np.zeros(Y.shape[0])
        for (i, j), coef in self.terms:
            out += coef * np.abs(Y[:, i] - Y[:, j])
        return out

    def to_dict(self) -> dict:
        return {
            "expression": self.expression,
            "kind": self.grid.kind.value,
            "grid_x": [float(v) for v in self.grid.x],
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
        }

    @classmethod
    def from_dict(cls, d) -> "FeatureFormula":
        return cls(parse_expression(d["expression"]), GridIdentity(d["kind"], d["grid_x"]),
                   float(d["slope"]), float(d["intercept"]), float(d["r2"]))


def _fit_line(x, t):
    xc = x - x.mean()
    tc = t - t.mean()
    sxx = xc @ xc
    slope = (xc @ tc) / sxx
    intercept = t.mean() - slope * x.mean()
    resid = t - (slope * x + intercept)
    r2 = 1.0 - (resid @ resid) / (tc @ tc)
    return float(slope), float(intercept), float(r2)


def so_select(pool: Sequence[Expression], target, k: int, grid: GridIdentity) -> FeatureFormula:
    """Best 1-D descriptor among expressions with at most ``k`` distinct leaves."""
    if not pool:
        raise ConfigError("pool must be nonempty")
    t = _check_target(target, len(pool[0].values))
    feasible = [e for e in pool if e.n_leaves <= k]
    if not feasible:
        raise EmptyFeasibleSet(f"no expression has <= {k} leaves")
    V = np.vstack([e.values for e in feasible])
    scores = abs_correlations(V, t)
    if not np.any(np.isfinite(scores)):
        raise EmptyFeasibleSet("every feasible expression is constant")
    best = int(_rank(scores, 1)[0])
    slope, intercept, r2 = _fit_line(feasible[best].values, t)
    return FeatureFormula(feasible[best].terms, grid, slope, intercept, r2)


@dataclass(frozen=True)
class SissoConfig:
    operators: tuple = ("+", "-")
    n_expansion: int = 2
    k: int = 6
    screen_size: int = 50
    seed: int = 0  # the search is exhaustive; kept for run manifests

    def __post_init__(self):
        object.__setattr__(self, "operators", tuple(self.operators))
        if not set(self.operators) <= {"+", "-"} or not self.operators:
            raise ConfigError(f"operators must be a nonempty subset of +,-: {self.operators}")
        if self.n_expansion < 0 or self.k < 1 or self.screen_size < 1:
            raise ConfigError("need n_expansion >= 0, k >= 1, screen_size >= 1")

    def to_dict(self):
        return {"operators": list(self.operators), "n_expansion": self.n_expansion,
                "k": self.k, "screen_size": self.screen_size, "seed": self.seed}

    @classmethod
    def from_dict(cls, d) -> "SissoConfig":
        return cls(**{k: (tuple(v) if k == "operators" else v) for k, v in d.items()})


def fit_descriptor(curves: Sequence[SampledCurve], target, config: SissoConfig = SissoConfig()
                   ) -> FeatureFormula:
    """SIS -> expansion -> SO on the two-point candidates of ``curves``."""
    cands = enumerate_two_point_features(curves)
    screened = sis_screen(cands, target, config.screen_size)
    if not screened:
        raise EmptyFeasibleSet("every candidate feature is constant")
    pool = primitive_pool(cands, screened)
    pool = expand(pool, config.operators, config.n_expansion, target, config.screen_size)
    return so_select(pool, target, config.k, cands.grid)


def evaluate_formula(formula: FeatureFormula, curve: SampledCurve) -> float:
    """Raw descriptor value on one curve; the calibration is not applied."""
    formula.grid.check(curve)
    return float(formula.values(np.asarray(curve.y)[None, :])[0])


# ------------------------------------------------------------- parsing

_TOKEN = re.compile(r"\s*(?:(\|y\[(\d+)\]-y\[(\d+)\]\|)|([+\-()])|(\S))")


def parse_expression(text: str) -> tuple:
    """Parse a +/- expression of ``|y[i]-y[j]|`` leaves (parentheses allowed)
    into canonical terms."""
    if text.strip() == "0":
        return ()
    tokens = []
    for m in _TOKEN.finditer(text):
        if m.group(5):
            raise ConfigError(f"unexpected {m.group(5)!r} in formula {text!r}")
        if m.group(1):
            tokens.append(("leaf", (int(m.group(2)), int(m.group(3)))))
        elif m.group(4):
            tokens.append((m.group(4), None))
    pos = 0

    def peek():
        return tokens[pos][0] if pos < len(tokens) else None

    def atom():
        nonlocal pos
        tok = peek()
        if tok == "leaf":
            i, j = tokens[pos][1]
            pos += 1
            if i > j:
                i, j = j, i
            return {(i, j): 1} if i != j else {}
        if tok == "(":
            pos += 1
            inner = expr()
            if peek() != ")":
                raise ConfigError(f"unbalanced parentheses in {text!r}")
            pos += 1
            return inner
        if tok == "-":
            pos += 1
            return {k: -v for k, v in atom().items()}
        raise ConfigError(f"malformed formula {text!r}")

    def expr():
        nonlocal pos
        acc = dict(atom())
        while peek() in ("+", "-"):
            sign = 1 if peek() == "+" else -1
            pos += 1
            for k, v in atom().items():
                acc[k] = acc.get(k, 0) + sign * v
        return acc

    acc = expr()
    if pos != len(tokens):
        raise ConfigError(f"trailing input in formula {text!r}")
    return tuple(sorted((k, v) for k, v in acc.items() if v != 0))
