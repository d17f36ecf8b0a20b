"""Synthetic model families, base predictors and task set-ups for tests and demos.

Everything here is deterministic given a seed.  The families cover the shapes
the verification suite needs: randomized small models for exact-law checks,
full-support models for sampled checks, structure/stratifier pairs whose
adjustment status is known, a three-factor chain for the stratification ladder,
and a structured text task driving the mock chat service end to end.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import causal_graph as cg
from .errors import ZeroMassStratum
from .mock import LabelRule
from .ooc import TaskConfig
from .scm import (
    DiscreteScm,
    FiniteDomain,
    conditional_world_table,
    scm_from_tables,
    stratum_values,
)
from .structured import parse_structured

_CONTEXT_NAMES = ("za", "zb", "zc")

#: Stratifier shapes for randomized models: a constant, the first factor,
#: the label, or the (first factor, label) pair.
S_MODES = ("const", "u1", "y", "pair")


def _tkey(*parts) -> str:
    return "|".join(str(p) for p in parts)


def _random_row(rng: np.random.Generator, size: int) -> np.ndarray:
    """A probability row bounded away from zero (positivity by construction)."""
    row = rng.uniform(0.2, 1.0, size)
    return row / row.sum()


def _uniform_p_u(u_grid) -> dict:
    return {u: 1.0 / len(u_grid) for u in u_grid}


def _stratum_entry(s_mode: str, u: tuple, y) -> str:
    if s_mode == "const":
        return "all"
    if s_mode == "u1":
        return str(u[0])
    if s_mode == "y":
        return str(y)
    if s_mode == "pair":
        return f"{u[0]}{y}"
    raise ValueError(f"unknown s_mode {s_mode!r}")


def random_fixture_scm(
    seed,
    n_contexts: int | None = None,
    n_factors: int | None = None,
    s_mode: str | None = None,
    confounded: bool | None = None,
) -> DiscreteScm:
    """A randomized table-backed model with a recoverable context token.

    The input renders as ``ctx=<z> u1=<..> ...`` with an optional hidden
    factor (never the first), an optional pad token, an optional free tail,
    and one extra random-valued token so the table content itself varies.
    """
    rng = np.random.default_rng(seed)
    if n_contexts is None:
        n_contexts = int(rng.integers(2, 4))
    if n_factors is None:
        n_factors = int(rng.integers(1, 4))
    if s_mode is None:
        s_mode = S_MODES[int(rng.integers(len(S_MODES)))]
    if confounded is None:
        confounded = bool(rng.integers(2))
    contexts = _CONTEXT_NAMES[:n_contexts]
    u_domains = tuple(FiniteDomain(f"u{i + 1}", (0, 1)) for i in range(n_factors))
    u_grid = list(itertools.product(*(d.values for d in u_domains)))
    p_u = {
        u: float(p) for u, p in zip(u_grid, _random_row(rng, len(u_grid)))
    }
    if confounded:
        z_parents = ("u1",)
        p_z = {
            (v,): dict(zip(contexts, map(float, _random_row(rng, n_contexts))))
            for v in (0, 1)
        }
    else:
        z_parents = ()
        p_z = {(): dict(zip(contexts, map(float, _random_row(rng, n_contexts))))}

    hidden = 0
    if n_factors >= 2 and rng.integers(2):
        hidden = int(rng.integers(2, n_factors + 1))
    with_pad = bool(rng.integers(2))
    with_tail = bool(rng.integers(2))

    x_table: dict[str, str] = {}
    y_table: dict[str, int] = {}
    s_table: dict[str, str] = {}
    for z in contexts:
        for u in u_grid:
            parts = [f"ctx={z}"]
            parts += [
                f"u{i + 1}={u[i]}" for i in range(n_factors) if i + 1 != hidden
            ]
            parts.append(f"v={int(rng.integers(2))}")
            if with_pad:
                parts.append("pad=0")
            x = " ".join(parts) + (" routine note" if with_tail else "")
            y = int(rng.integers(2))
            x_table[_tkey(z, *u)] = x
            y_table[_tkey(z, *u)] = y
            s_table[_tkey(z, *u, y)] = _stratum_entry(s_mode, u, y)
    s_values = tuple(sorted(set(s_table.values())))
    return scm_from_tables(
        u_domains, FiniteDomain("z", contexts), p_u, z_parents, p_z,
        x_table, y_table, s_table, y_values=(0, 1), s_values=s_values,
    )


# ---------------------------------------------------------------------------
# Base predictors over the structured micro-format
# ---------------------------------------------------------------------------

def ctx_reader(x) -> str:
    """Copies the context token; maximally z-sensitive."""
    return parse_structured(x).get("ctx", "?")


def u1_reader(x) -> str:
    """Reads the first exogenous factor; context-free by construction."""
    return parse_structured(x).get("u1", "0")


def parity_reader(x) -> str:
    """XOR of every visible exogenous-factor token."""
    st = parse_structured(x)
    total = 0
    for key, value in st.pairs:
        if key.startswith("u") and key[1:].isdigit():
            total ^= int(value) & 1
    return str(total)


def make_mixed_reader(reference_context) -> Callable:
    """First factor XOR an indicator of one context value."""

    def mixed_reader(x) -> str:
        st = parse_structured(x)
        bit = int(st.get("u1", "0")) & 1
        flip = 1 if st.get("ctx") == reference_context else 0
        return str(bit ^ flip)

    return mixed_reader


def ylab_reader(x) -> str:
    """Reads the label token of models whose input displays the label."""
    return parse_structured(x).get("ylab", "?")


def r_reader(x) -> str:
    """Reads the single revealed token of the chain model."""
    return parse_structured(x).get("r", "?")


def base_predictor_suite(scm: DiscreteScm) -> dict[str, Callable]:
    """Named base predictors exercised against a fixture model."""
    return {
        "ctx_reader": ctx_reader,
        "u1_reader": u1_reader,
        "parity_reader": parity_reader,
        "mixed_reader": make_mixed_reader(scm.z_domain.values[0]),
    }


def metric_predictor(fn: Callable) -> Callable:
    """Adapt an x-only predictor to the (x, s) signature of the metrics API."""
    return lambda x, s: fn(x)


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NamedFixture:
    name: str
    scm: DiscreteScm


def fixture_suite(count: int = 24, seed: int = 20_240_611) -> list[NamedFixture]:
    """Randomized models cycling through sizes and stratifier shapes."""
    out = []
    for i in range(count):
        s_mode = S_MODES[i % len(S_MODES)]
        scm = random_fixture_scm(
            seed=[seed, i],
            n_contexts=2 + (i % 2),
            n_factors=1 + (i % 3),
            s_mode=s_mode,
        )
        out.append(NamedFixture(f"rand-{i:02d}-{s_mode}", scm))
    return out


def _has_full_support(scm: DiscreteScm) -> bool:
    try:
        for s in stratum_values(scm):
            for z in scm.z_domain.values:
                conditional_world_table(scm, stratum=s, z=z)
    except ZeroMassStratum:
        return False
    return True


def sampled_fixture_suite(
    count: int = 6, seed: int = 20_240_613
) -> list[NamedFixture]:
    """Two-context, few-strata models with every (s, z) cell populated.

    Used for balanced-draw checks, where an empty cell would abort the draw
    and many strata would thin the per-cell sample.
    """
    modes = ("const", "u1", "y")
    out = []
    for i in range(count):
        s_mode = modes[i % len(modes)]
        for attempt in range(50):
            scm = random_fixture_scm(
                seed=[seed, i, attempt],
                n_contexts=2,
                n_factors=1 + (i % 3),
                s_mode=s_mode,
            )
            if _has_full_support(scm):
                break
        else:  # pragma: no cover - the families above always admit support
            raise RuntimeError("no full-support model found")
        out.append(NamedFixture(f"sampled-{i}-{s_mode}", scm))
    return out


# ---------------------------------------------------------------------------
# Structure-aware families with known adjustment status
# ---------------------------------------------------------------------------

def anticausal_fixture(seed, s_mode: str = "y") -> DiscreteScm:
    """Label causes the input; a latent cause drives both label and context.

    The first factor is that latent cause and the label copies it, so the
    input may only depend on it through the label: the rendering shows
    ``ylab`` and ``u2`` plus a random extra token per (z, y, u2) cell.
    Stratifying by the label blocks the confounded path.
    """
    rng = np.random.default_rng(seed)
    u_domains = (FiniteDomain("u1", (0, 1)), FiniteDomain("u2", (0, 1)))
    u_grid = list(itertools.product((0, 1), (0, 1)))
    contexts = ("za", "zb")
    p_u = {u: float(p) for u, p in zip(u_grid, _random_row(rng, 4))}
    p_z = {
        (v,): dict(zip(contexts, map(float, _random_row(rng, 2))))
        for v in (0, 1)
    }
    x_table: dict[str, str] = {}
    y_table: dict[str, int] = {}
    s_table: dict[str, str] = {}
    cell_token: dict[tuple, int] = {}
    for z in contexts:
        for u in u_grid:
            y = u[0]
            cell = (z, y, u[1])
            if cell not in cell_token:
                cell_token[cell] = int(rng.integers(2))
            x_table[_tkey(z, *u)] = (
                f"ctx={z} ylab={y} u2={u[1]} v={cell_token[cell]}"
            )
            y_table[_tkey(z, *u)] = y
            s_table[_tkey(z, *u, y)] = _stratum_entry(s_mode, u, y)
    return scm_from_tables(
        u_domains, FiniteDomain("z", contexts), p_u, ("u1",), p_z,
        x_table, y_table, s_table, y_values=(0, 1),
        s_values=tuple(sorted(set(s_table.values()))),
    )


def confounded_fixture(seed, s_mode: str = "const", y_mode: str = "random") -> DiscreteScm:
    """The first factor drives both the context and the input.

    ``y_mode`` picks the label mechanism: a random (z, u) table, or a pure
    copy of the second factor (useful when the label must be causally
    unrelated to the confounder).
    """
    rng = np.random.default_rng(seed)
    u_domains = (FiniteDomain("u1", (0, 1)), FiniteDomain("u2", (0, 1)))
    u_grid = list(itertools.product((0, 1), (0, 1)))
    contexts = ("za", "zb")
    p_u = {u: float(p) for u, p in zip(u_grid, _random_row(rng, 4))}
    p_z = {
        (v,): dict(zip(contexts, map(float, _random_row(rng, 2))))
        for v in (0, 1)
    }
    x_table: dict[str, str] = {}
    y_table: dict[str, int] = {}
    s_table: dict[str, str] = {}
    for z in contexts:
        for u in u_grid:
            y = int(rng.integers(2)) if y_mode == "random" else u[1]
            x_table[_tkey(z, *u)] = (
                f"ctx={z} u1={u[0]} u2={u[1]} v={int(rng.integers(2))}"
            )
            y_table[_tkey(z, *u)] = y
            if s_mode == "u2":
                s_table[_tkey(z, *u, y)] = str(u[1])
            else:
                s_table[_tkey(z, *u, y)] = _stratum_entry(s_mode, u, y)
    return scm_from_tables(
        u_domains, FiniteDomain("z", contexts), p_u, ("u1",), p_z,
        x_table, y_table, s_table, y_values=(0, 1),
        s_values=tuple(sorted(set(s_table.values()))),
    )


def exogenous_fixture(seed, s_mode: str = "const") -> DiscreteScm:
    """Context assigned independently of every exogenous factor."""
    rng = np.random.default_rng(seed)
    u_domains = (FiniteDomain("u1", (0, 1)), FiniteDomain("u2", (0, 1)))
    u_grid = list(itertools.product((0, 1), (0, 1)))
    contexts = ("za", "zb")
    p_u = {u: float(p) for u, p in zip(u_grid, _random_row(rng, 4))}
    p_z = {(): dict(zip(contexts, map(float, _random_row(rng, 2))))}
    x_table: dict[str, str] = {}
    y_table: dict[str, int] = {}
    s_table: dict[str, str] = {}
    for z in contexts:
        for u in u_grid:
            y = int(rng.integers(2))
            x_table[_tkey(z, *u)] = (
                f"ctx={z} u1={u[0]} u2={u[1]} v={int(rng.integers(2))}"
            )
            y_table[_tkey(z, *u)] = y
            s_table[_tkey(z, *u, y)] = _stratum_entry(s_mode, u, y)
    return scm_from_tables(
        u_domains, FiniteDomain("z", contexts), p_u, (), p_z,
        x_table, y_table, s_table, y_values=(0, 1),
        s_values=tuple(sorted(set(s_table.values()))),
    )


def direct_effect_fixture(seed) -> DiscreteScm:
    """Exogenous context with a guaranteed direct effect on the label.

    Stratifying by the label is then conditioning on a treatment effect,
    which no valid adjustment set may do.
    """
    rng = np.random.default_rng(seed)
    scm_seedless = exogenous_fixture(seed, s_mode="y")
    # Rebuild the label table forcing a z-dependence on the first profile.
    y_table = dict(scm_seedless.tables["y"])
    u_first = (0, 0)
    y_table[_tkey("zb", *u_first)] = 1 - y_table[_tkey("za", *u_first)]
    x_table = dict(scm_seedless.tables["x"])
    s_table = {}
    u_grid = list(itertools.product((0, 1), (0, 1)))
    for z in ("za", "zb"):
        for u in u_grid:
            y = y_table[_tkey(z, *u)]
            s_table[_tkey(z, *u, y)] = str(y)
    del rng
    return scm_from_tables(
        scm_seedless.u_domains, scm_seedless.z_domain, scm_seedless.p_u,
        scm_seedless.z_parents, scm_seedless.p_z_given_parents,
        x_table, y_table, s_table, y_values=(0, 1), s_values=("0", "1"),
    )


@dataclass(frozen=True)
class AdjustmentCase:
    """A model, the structure it realizes, and one candidate stratifier set.

    ``certified`` records whether the candidate passes the graphical
    adjustment check; for certified cases the model's stratifier equals the
    candidate's variables, so distribution-level equalities can be asserted.
    """

    name: str
    scm: DiscreteScm
    graph: cg.CausalDag
    candidate: tuple[str, ...]
    certified: bool


def _exogenous_graph() -> cg.CausalDag:
    return cg.dag(
        {"Z": cg.OBSERVED, "X": cg.OBSERVED, "Y": cg.OBSERVED,
         "U1": cg.OBSERVED, "U2": cg.LATENT},
        [("Z", "X"), ("U1", "X"), ("U2", "X"),
         ("Z", "Y"), ("U1", "Y"), ("U2", "Y")],
    )


def _confounded_graph(u2_mark: str = cg.LATENT) -> cg.CausalDag:
    return cg.dag(
        {"Z": cg.OBSERVED, "X": cg.OBSERVED, "Y": cg.OBSERVED,
         "U1": cg.OBSERVED, "U2": u2_mark},
        [("U1", "Z"), ("U1", "X"), ("U2", "X"),
         ("Z", "Y"), ("U1", "Y"), ("U2", "Y")],
    )


def _confounded_label_graph() -> cg.CausalDag:
    # Confounded context; the label is caused by the second factor alone.
    return cg.dag(
        {"Z": cg.OBSERVED, "X": cg.OBSERVED, "Y": cg.OBSERVED,
         "U1": cg.LATENT, "U2": cg.LATENT},
        [("U1", "Z"), ("U1", "X"), ("U2", "X"), ("U2", "Y")],
    )


def _direct_effect_graph() -> cg.CausalDag:
    return cg.dag(
        {"Z": cg.OBSERVED, "X": cg.OBSERVED, "Y": cg.OBSERVED,
         "U": cg.LATENT},
        [("Z", "X"), ("U", "X"), ("Z", "Y"), ("U", "Y")],
    )


def adjustment_fixture_cases(seed: int = 20_240_617) -> list[AdjustmentCase]:
    """Certified and rejected stratifier candidates with matching models.

    Certified cases are deliberately restricted to structures where the
    graphical check agrees with the classical criterion, so the matching
    distribution-level equality is provable, not incidental.
    """
    cases = [
        AdjustmentCase(
            "anticausal-label", anticausal_fixture([seed, 0], "y"),
            cg.anticausal_graph(), ("Y",), True,
        ),
        AdjustmentCase(
            "exogenous-empty", exogenous_fixture([seed, 1], "const"),
            _exogenous_graph(), (), True,
        ),
        AdjustmentCase(
            "exogenous-factor", exogenous_fixture([seed, 2], "u1"),
            _exogenous_graph(), ("U1",), True,
        ),
        AdjustmentCase(
            "confounded-by-factor", confounded_fixture([seed, 3], "u1"),
            _confounded_graph(), ("U1",), True,
        ),
        AdjustmentCase(
            "confounded-unadjusted", confounded_fixture([seed, 4], "const"),
            _confounded_graph(), (), False,
        ),
        AdjustmentCase(
            "confounded-wrong-factor",
            confounded_fixture([seed, 5], "u2"),
            _confounded_graph(u2_mark=cg.OBSERVED), ("U2",), False,
        ),
        AdjustmentCase(
            "anticausal-unadjusted", anticausal_fixture([seed, 6], "const"),
            cg.anticausal_graph(), (), False,
        ),
        AdjustmentCase(
            "direct-effect-label", direct_effect_fixture([seed, 7]),
            _direct_effect_graph(), ("Y",), False,
        ),
        AdjustmentCase(
            "confounded-label",
            confounded_fixture([seed, 8], "y", y_mode="u2"),
            _confounded_label_graph(), ("Y",), False,
        ),
    ]
    return cases


# ---------------------------------------------------------------------------
# Stratification-ladder chain
# ---------------------------------------------------------------------------

def chain_fixture(level: int) -> DiscreteScm:
    """Three fair bits; the input reveals bit 1 under one context, bit 2
    under the other.  ``level`` bits (0..3, leading) are exposed to the
    stratifier, so finer levels pin more of the sampler's posterior.
    """
    if not 0 <= level <= 3:
        raise ValueError("level must be in 0..3")
    u_domains = tuple(FiniteDomain(f"u{i + 1}", (0, 1)) for i in range(3))
    u_grid = list(itertools.product((0, 1), (0, 1), (0, 1)))
    contexts = ("za", "zb")
    p_u = _uniform_p_u(u_grid)
    p_z = {(): {"za": 0.5, "zb": 0.5}}
    x_table: dict[str, str] = {}
    y_table: dict[str, int] = {}
    s_table: dict[str, str] = {}
    for z in contexts:
        for u in u_grid:
            revealed = u[0] if z == "za" else u[1]
            x_table[_tkey(z, *u)] = f"ctx={z} r={revealed}"
            y = u[0]
            y_table[_tkey(z, *u)] = y
            s = "all" if level == 0 else "".join(str(b) for b in u[:level])
            s_table[_tkey(z, *u, y)] = s
    return scm_from_tables(
        u_domains, FiniteDomain("z", contexts), p_u, (), p_z,
        x_table, y_table, s_table, y_values=(0, 1),
        s_values=tuple(sorted(set(s_table.values()))),
    )


# ---------------------------------------------------------------------------
# Mock chat task
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OocFixture:
    scm: DiscreteScm
    task: TaskConfig


def ooc_fixture(
    data_contexts: tuple[str, str] = ("a", "b"),
    sampled_contexts: tuple[str, ...] = ("unknown", "removed"),
) -> OocFixture:
    """Structured notes task where the plain predictor reads the context.

    Notes carry a context token, an ambiguity flag, the topic bit, and a
    stratum token combining flag and topic.  The mock reads the topic on
    clear notes; on ambiguous notes it answers from the context when it
    recognizes it and answers 0 otherwise.  With the default disjoint
    sampled contexts, every rewritten note falls out of the
    context-reading branch: context-driven errors (half the ambiguous
    notes, all on one side) become context-free errors (the ambiguous-1
    notes), equal in number but balanced across contexts.  Passing
    ``sampled_contexts`` equal to ``data_contexts`` instead reproduces
    plain context resampling, which the augmentation module can replay
    exactly; multi-letter context words like ``za`` avoid collisions with
    the rewrite-instruction wording the mock scans.
    """
    flags = ("amb", "clear")
    bits = ("0", "1")
    u_domains = (FiniteDomain("u1", flags), FiniteDomain("u2", bits))
    u_grid = list(itertools.product(flags, bits))
    contexts = tuple(data_contexts)
    p_u = _uniform_p_u(u_grid)
    p_z = {(): {contexts[0]: 0.5, contexts[1]: 0.5}}
    x_table: dict[str, str] = {}
    y_table: dict[str, str] = {}
    s_table: dict[str, str] = {}
    for z in contexts:
        for flag, bit in u_grid:
            x_table[_tkey(z, flag, bit)] = (
                f"ctx={z} s={flag}{bit} kind={flag} topic={bit} "
                "pad=0 clinic note"
            )
            y_table[_tkey(z, flag, bit)] = bit
            s_table[_tkey(z, flag, bit, bit)] = f"{flag}{bit}"
    scm = scm_from_tables(
        u_domains, FiniteDomain("z", contexts), p_u, (), p_z,
        x_table, y_table, s_table, y_values=("0", "1"),
        s_values=("amb0", "amb1", "clear0", "clear1"),
    )
    task = TaskConfig(
        name="structured-notes",
        contexts=tuple(sampled_contexts),
        z_description="The channel marker token at the front of the note",
        s_description="A synthetic clinic note of kind {S_lm}",
        labels=("0", "1"),
        standard_prompt=(
            "You will be provided with a synthetic clinic note, and your task "
            "is to classify whether its topic indicator is 1 or 0."
        ),
        strata=("amb0", "amb1", "clear0", "clear1"),
        stratifier_question="Which kind of note is this?",
        m=3,
        mock={
            "label_rules": [
                {"if": {"ctx": contexts[0], "kind": "amb"}, "label": "1"},
                {"if": {"ctx": contexts[1], "kind": "amb"}, "label": "0"},
                {"if": {"kind": "amb"}, "label": "0"},
                {"read": "topic"},
            ],
        },
    )
    return OocFixture(scm, task)


def mock_label_fn(task: TaskConfig) -> Callable:
    """The mock service's label decision table as a plain x-only predictor.

    Lets the augmentation module replay exactly what the chat pipeline's
    final prediction call would answer on any rewritten text.
    """
    rules = tuple(LabelRule.from_dict(d) for d in task.mock["label_rules"])

    def fn(x) -> str:
        st = parse_structured(x)
        for rule in rules:
            if rule.matches(st):
                return rule.answer(st)
        return "unknown"

    return fn
