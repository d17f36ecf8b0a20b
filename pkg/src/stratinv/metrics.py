"""Invariance metrics, exact checks, and the stratified permutation test.

Conventions used throughout:

* A record's stratum ``s`` may be None, which means the empty stratification
  (every record in one stratum).
* The bias statistic generalizes the binary rate-gap to any label domain by
  maxing the gap over all labels; for two labels this reduces to the binary
  formula, so there is no separate positive-label argument.
* The statistic is an *incomplete* invariance test on observational data: a
  zero gap certifies stratified invariance only when the stratifier is an
  adjustment set for (prediction, context). Reports carry that caveat.
"""

from __future__ import annotations

import itertools
import json
import warnings
from dataclasses import asdict, dataclass
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    BalanceError,
    EmptyCell,
    MissingCell,
    MissingLabels,
    NonBinaryLabel,
)
from . import scm as scm_mod

ADJUSTMENT_CAVEAT = (
    "zero bias certifies stratified invariance only if the stratifier is an "
    "adjustment set for (prediction, context); that premise is the caller's"
)


@dataclass(frozen=True)
class LabeledRecord:
    """One dataset row: input, stratum, context, optional label/prediction."""

    record_id: str
    x: Any
    s: Any
    z: Any
    y: Any = None
    y_hat: Any = None


def load_records(path) -> list[LabeledRecord]:
    """Read a JSON-lines dataset."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            out.append(
                LabeledRecord(
                    record_id=doc["record_id"],
                    x=doc["x"],
                    s=doc.get("s"),
                    z=doc.get("z"),
                    y=doc.get("y"),
                    y_hat=doc.get("y_hat"),
                )
            )
    return out


def dump_records(records: Iterable[LabeledRecord], path) -> None:
    """Write a JSON-lines dataset with stable key order."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")


# --- contingency -------------------------------------------------------------


@dataclass(frozen=True)
class ContingencyCube:
    """Counts over (stratum, context, prediction); the metric sufficient stat."""

    counts: Mapping[tuple, int]
    strata: tuple
    contexts: tuple
    labels: tuple

    def cell_total(self, s, z) -> int:
        return sum(self.counts.get((s, z, y), 0) for y in self.labels)

    def rate(self, s, z, y) -> float:
        total = self.cell_total(s, z)
        if total == 0:
            raise EmptyCell(f"no records with stratum={s!r}, context={z!r}")
        return self.counts.get((s, z, y), 0) / total


def build_contingency(records: Sequence[LabeledRecord]) -> ContingencyCube:
    if not records:
        raise MissingLabels("no records")
    for r in records:
        if r.y_hat is None:
            raise MissingLabels(f"record {r.record_id!r} has no prediction")
    counts: dict[tuple, int] = {}
    strata = list(dict.fromkeys(r.s for r in records))
    contexts = list(dict.fromkeys(r.z for r in records))
    labels = list(dict.fromkeys(r.y_hat for r in records))
    for r in records:
        key = (r.s, r.z, r.y_hat)
        counts[key] = counts.get(key, 0) + 1
    return ContingencyCube(counts, tuple(strata), tuple(contexts), tuple(labels))


# --- the bias statistic ------------------------------------------------------


@dataclass(frozen=True)
class SiBiasReport:
    value: float
    per_stratum: tuple[tuple[Any, float], ...]
    n: int
    caveat: str = ADJUSTMENT_CAVEAT


def si_bias(
    records: Sequence[LabeledRecord], *, strict_binary: bool = False
) -> SiBiasReport:
    """Max over strata and context pairs of the prediction-rate gap.

    For each stratum s and pair of contexts z1, z2, the gap is
    max over labels y of |P(yhat=y | s, z1) - P(yhat=y | s, z2)|; the
    statistic is the largest gap. Every observed (s, z) cell must be
    populated (EmptyCell otherwise); a dataset with a single context has
    statistic 0 by convention.
    """
    cube = build_contingency(records)
    if strict_binary and len(cube.labels) > 2:
        raise NonBinaryLabel(
            f"strict binary mode with labels {sorted(map(str, cube.labels))}"
        )
    for s in cube.strata:
        for z in cube.contexts:
            if cube.cell_total(s, z) == 0:
                raise EmptyCell(f"no records with stratum={s!r}, context={z!r}")
    per_stratum = []
    for s in cube.strata:
        gap = 0.0
        for z1, z2 in itertools.combinations(cube.contexts, 2):
            for y in cube.labels:
                gap = max(gap, abs(cube.rate(s, z1, y) - cube.rate(s, z2, y)))
        per_stratum.append((s, gap))
    value = max((g for _, g in per_stratum), default=0.0)
    return SiBiasReport(value, tuple(per_stratum), len(records))


# --- exact checks against a model --------------------------------------------

Predictor = Callable[[Any, Any], Any]  # (x, s) -> label or {label: prob}


def _as_kernel(predictor: Predictor, x, s) -> Mapping[Any, float]:
    out = predictor(x, s)
    if isinstance(out, Mapping):
        return out
    return {out: 1.0}


@dataclass(frozen=True)
class InvarianceReport:
    invariant: bool
    deviation: float
    tolerance: float
    table: Mapping[tuple, Mapping[Any, float]]  # (z, s) -> {y: prob}
    skipped_strata: tuple = ()


def exact_prediction_law(
    model: "scm_mod.DiscreteScm", predictor: Predictor
) -> dict[tuple, dict[Any, float]]:
    """Exact P(prediction(z) = y | S = s) for every (z, s) by enumeration.

    The predictor may return a label or a {label: prob} kernel; randomized
    predictors enter through their conditional law, which is exactly the
    seed-stream lifting of a stochastic predictor.
    """
    worlds = scm_mod.enumerate_joint(model)
    s_mass: dict[Any, float] = {}
    by_stratum: dict[Any, list[tuple[scm_mod.World, float]]] = {}
    for w, m in worlds:
        s_obs = scm_mod.observed(model, w)[2]
        s_mass[s_obs] = s_mass.get(s_obs, 0.0) + m
        by_stratum.setdefault(s_obs, []).append((w, m))
    table: dict[tuple, dict[Any, float]] = {}
    for z in model.z_domain.values:
        for s, members in by_stratum.items():
            law: dict[Any, float] = {}
            for w, m in members:
                x_pot = model.x_fn(z, w.u)
                for y, p in _as_kernel(predictor, x_pot, s).items():
                    law[y] = law.get(y, 0.0) + p * m / s_mass[s]
            table[(z, s)] = law
    return table


def check_stratified_invariance_exact(
    model: "scm_mod.DiscreteScm", predictor: Predictor, tol: float = 1e-12
) -> InvarianceReport:
    """Is the potential prediction law constant in z within every stratum?"""
    table = exact_prediction_law(model, predictor)
    strata = {s for (_z, s) in table}
    declared = model.s_values
    skipped = ()
    if declared is not None:
        skipped = tuple(s for s in declared if s not in strata)
        if skipped:
            warnings.warn(
                f"strata {skipped!r} have zero mass and were skipped",
                stacklevel=2,
            )
    deviation = 0.0
    labels = {y for law in table.values() for y in law}
    for s in strata:
        for z1, z2 in itertools.combinations(model.z_domain.values, 2):
            for y in labels:
                gap = abs(
                    table[(z1, s)].get(y, 0.0) - table[(z2, s)].get(y, 0.0)
                )
                deviation = max(deviation, gap)
    return InvarianceReport(deviation <= tol, deviation, tol, table, skipped)


@dataclass(frozen=True)
class CounterfactualReport:
    invariant: bool
    agreement_mass: float  # probability of worlds whose potentials all agree
    witness: tuple | None  # (u, z1, z2, y1, y2)


def check_counterfactual_invariance_exact(
    model: "scm_mod.DiscreteScm", predictor: Predictor
) -> CounterfactualReport:
    """Do all contexts give the same prediction in every positive-mass world?

    The predictor must be deterministic here (a kernel has no almost-sure
    statement attached). The stratum fed to the predictor is the world's
    observed one.
    """
    witness = None
    agree_mass = 0.0
    total = 0.0
    zs = model.z_domain.values
    for w, m in scm_mod.enumerate_joint(model):
        s_obs = scm_mod.observed(model, w)[2]
        labels = [predictor(model.x_fn(z, w.u), s_obs) for z in zs]
        total += m
        if all(lab == labels[0] for lab in labels):
            agree_mass += m
        elif witness is None:
            bad = next(i for i, lab in enumerate(labels) if lab != labels[0])
            witness = (w.u, zs[0], zs[bad], labels[0], labels[bad])
    return CounterfactualReport(witness is None, agree_mass / total, witness)


# --- counterfactual-invariance probability -----------------------------------


def ci_probability(pred_map: Mapping[tuple, Any]) -> float:
    """Fraction of exogenous profiles whose prediction is context-free.

    ``pred_map`` maps (z, u) to a label over the full grid of contexts and
    profiles; an incomplete grid raises MissingCell. Profiles are weighted
    uniformly, matching the definition (1/prod |Ui|) * sum over u.
    """
    if not pred_map:
        raise MissingCell("empty prediction map")
    zs = list(dict.fromkeys(z for z, _u in pred_map))
    us = list(dict.fromkeys(u for _z, u in pred_map))
    for z, u in itertools.product(zs, us):
        if (z, u) not in pred_map:
            raise MissingCell(f"prediction map missing (z={z!r}, u={u!r})")
    agree = sum(
        1 for u in us if len({pred_map[(z, u)] for z in zs}) == 1
    )
    return agree / len(us)


def potential_prediction_map(
    model: "scm_mod.DiscreteScm",
    predictor: Callable[[Any, Any, np.random.Generator], Any],
    seed: int,
) -> dict[tuple, Any]:
    """Derandomized potential predictions over the full (z, u) grid.

    Each exogenous profile u gets its own RNG stream derived from (seed, u's
    grid index), shared across contexts, so a randomized predictor becomes a
    deterministic function of (z, u) and the map is a valid ci_probability
    input. The stratum handed to the predictor is the potential one at z.
    """
    out: dict[tuple, Any] = {}
    u_grid = list(itertools.product(*(d.values for d in model.u_domains)))
    for i, u in enumerate(u_grid):
        for z in model.z_domain.values:
            rng = np.random.default_rng([seed, i, 0])
            x, _y, s = scm_mod.potential(model, scm_mod.World(u=u, z=z), z)
            out[(z, u)] = predictor(x, s, rng)
    return out


# --- stratified permutation test ---------------------------------------------


@dataclass(frozen=True)
class TestReport:
    statistic: float
    p_value: float
    permutations: int
    per_stratum: tuple[tuple[Any, float], ...]
    caveat: str = ADJUSTMENT_CAVEAT


def _encode(records: Sequence[LabeledRecord]):
    strata = list(dict.fromkeys(r.s for r in records))
    contexts = list(dict.fromkeys(r.z for r in records))
    labels = list(dict.fromkeys(r.y_hat for r in records))
    si = np.array([strata.index(r.s) for r in records])
    zi = np.array([contexts.index(r.z) for r in records])
    yi = np.array([labels.index(r.y_hat) for r in records])
    return strata, contexts, labels, si, zi, yi


def _gap_statistic(si, zi, yi, n_s, n_z, n_y) -> float:
    flat = (si * n_z + zi) * n_y + yi
    counts = np.bincount(flat, minlength=n_s * n_z * n_y).reshape(n_s, n_z, n_y)
    totals = counts.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore"):
        rates = np.where(totals > 0, counts / np.maximum(totals, 1), np.nan)
    gaps = np.nanmax(rates, axis=1) - np.nanmin(rates, axis=1)  # (s, y)
    return float(np.nanmax(gaps))


def ci_permutation_test(
    records: Sequence[LabeledRecord],
    permutations: int = 999,
    rng: np.random.Generator | int | None = None,
) -> TestReport:
    """Permutation test of prediction ⟂ context within strata.

    The context labels are shuffled independently inside each stratum, which
    realizes the null of conditional independence; the statistic is the
    max-gap bias. The p-value uses the add-one estimator
    (1 + #{permuted >= observed}) / (1 + permutations) and is therefore
    never zero and conservative under ties. Completeness (rejecting exactly
    when stratified invariance fails) additionally needs the stratifier to
    be an adjustment set; see the report caveat.
    """
    if permutations < 1:
        raise ValueError("permutations must be >= 1")
    if rng is None or isinstance(rng, int):
        rng = np.random.default_rng(rng)
    observed_report = si_bias(records)  # validates cells; gives per_stratum
    strata, contexts, labels, si, zi, yi = _encode(records)
    n_s, n_z, n_y = len(strata), len(contexts), len(labels)
    obs = _gap_statistic(si, zi, yi, n_s, n_z, n_y)
    stratum_index = [np.nonzero(si == k)[0] for k in range(n_s)]
    exceed = 0
    for _ in range(permutations):
        perm_z = zi.copy()
        for idx in stratum_index:
            perm_z[idx] = zi[idx][rng.permutation(len(idx))]
        stat = _gap_statistic(si, perm_z, yi, n_s, n_z, n_y)
        if stat >= obs - 1e-12:
            exceed += 1
    p = (1 + exceed) / (1 + permutations)
    return TestReport(obs, p, permutations, observed_report.per_stratum)


# --- estimation, positivity, accuracy ----------------------------------------


def estimate_potential_conditional(
    records: Sequence[LabeledRecord],
) -> dict[tuple, dict[Any, float]]:
    """Empirical P(yhat = y | s, z) over the observed (s, z) grid.

    Under an adjustment-set stratifier this estimates the potential
    prediction law P(yhat(z) = y | s); without that premise it is just the
    observational conditional.
    """
    cube = build_contingency(records)
    out: dict[tuple, dict[Any, float]] = {}
    for s in cube.strata:
        for z in cube.contexts:
            total = cube.cell_total(s, z)
            if total == 0:
                raise EmptyCell(f"no records with stratum={s!r}, context={z!r}")
            out[(s, z)] = {
                y: cube.counts.get((s, z, y), 0) / total for y in cube.labels
            }
    return out


@dataclass(frozen=True)
class PositivityReport:
    ok: bool
    witnesses: tuple[tuple, ...]  # (stratum, context, conditional prob)


def check_positivity(source, z_values: Sequence | None = None) -> PositivityReport:
    """Check 0 < P(z | s) < 1 for every stratum and context.

    ``source`` is either a record list (empirical frequencies) or a model
    (exact masses by enumeration). A stratum where some context is absent,
    or where one context has all the mass, is a violation; both make the
    stratified comparison at that cell meaningless.
    """
    if isinstance(source, scm_mod.DiscreteScm):
        zs = list(z_values) if z_values is not None else list(source.z_domain.values)
        mass: dict[tuple, float] = {}
        s_total: dict[Any, float] = {}
        for w, m in scm_mod.enumerate_joint(source):
            s_obs = scm_mod.observed(source, w)[2]
            mass[(s_obs, w.z)] = mass.get((s_obs, w.z), 0.0) + m
            s_total[s_obs] = s_total.get(s_obs, 0.0) + m
        strata = list(s_total)
    else:
        records = list(source)
        zs = (
            list(z_values)
            if z_values is not None
            else list(dict.fromkeys(r.z for r in records))
        )
        mass = {}
        s_total = {}
        for r in records:
            mass[(r.s, r.z)] = mass.get((r.s, r.z), 0.0) + 1.0
            s_total[r.s] = s_total.get(r.s, 0.0) + 1.0
        strata = list(dict.fromkeys(r.s for r in records))
    witnesses = []
    for s in strata:
        for z in zs:
            p = mass.get((s, z), 0.0) / s_total[s]
            if not (0.0 < p < 1.0):
                witnesses.append((s, z, p))
    return PositivityReport(not witnesses, tuple(witnesses))


def macro_f1(
    records: Sequence[LabeledRecord], labels: Sequence | None = None
) -> float:
    """Unweighted mean of per-class F1 between y and yhat.

    A class with no true and no predicted instances contributes F1 = 1 (it
    was handled perfectly); this only arises when an explicit label list
    names a class absent from the data.
    """
    records = list(records)
    if not records:
        raise MissingLabels("no records")
    for r in records:
        if r.y is None or r.y_hat is None:
            raise MissingLabels(
                f"record {r.record_id!r} lacks a label or a prediction"
            )
    classes = (
        list(labels)
        if labels is not None
        else list(dict.fromkeys([r.y for r in records] + [r.y_hat for r in records]))
    )
    scores = []
    for c in classes:
        tp = sum(1 for r in records if r.y == c and r.y_hat == c)
        fp = sum(1 for r in records if r.y != c and r.y_hat == c)
        fn = sum(1 for r in records if r.y == c and r.y_hat != c)
        if tp + fp + fn == 0:
            scores.append(1.0)
        else:
            scores.append(2 * tp / (2 * tp + fp + fn))
    return float(np.mean(scores))


# --- balanced subsampling ----------------------------------------------------


def balanced_subsample(
    records: Sequence[LabeledRecord], n: int, rng: np.random.Generator | int | None = None
) -> list[LabeledRecord]:
    """Equal-size draw of floor(n / (|S| |Z|)) records per (s, z) cell.

    Draws are without replacement; a cell with too few records raises
    BalanceError naming it. Output order is cell-major then draw order,
    deterministic given the RNG.
    """
    if rng is None or isinstance(rng, int):
        rng = np.random.default_rng(rng)
    records = list(records)
    strata = list(dict.fromkeys(r.s for r in records))
    contexts = list(dict.fromkeys(r.z for r in records))
    per_cell = n // (len(strata) * len(contexts))
    if per_cell < 1:
        raise BalanceError(
            f"n={n} gives an empty per-cell quota for "
            f"{len(strata)}x{len(contexts)} cells"
        )
    out: list[LabeledRecord] = []
    for s in strata:
        for z in contexts:
            cell = [r for r in records if r.s == s and r.z == z]
            if len(cell) < per_cell:
                raise BalanceError(
                    f"cell (s={s!r}, z={z!r}) has {len(cell)} records, "
                    f"needs {per_cell}"
                )
            picked = rng.choice(len(cell), size=per_cell, replace=False)
            out.extend(cell[i] for i in sorted(picked))
    return out
