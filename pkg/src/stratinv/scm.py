"""Discrete structural causal models with explicit potential outcomes.

A model has finite exogenous factors U = (U1..Uk) with joint table p_u, a
finite context Z drawn from a table conditioned on a declared subset of the
factors, and deterministic mechanisms

    x = x_fn(z, u)      input shown to a predictor
    y = y_fn(z, u)      true label
    s = s_fn(z, u, y)   stratifier measurement

All stochasticity lives in p_u and p_z_given_parents, so a world (u, z) pins
down every observed and potential value: the potential triple at z* is just
the mechanisms evaluated at (z*, u). Exact distributions are computed by
enumerating worlds; nothing in this module is approximate.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from .errors import (
    AmbiguousContext,
    DomainMismatch,
    EnumerationTooLarge,
    InconsistentEvidence,
    ZeroMassStratum,
)

ENUMERATION_CAP = 1_000_000
_ROW_SUM_TOL = 1e-12

#: Sentinel returned by context recoverers when (x, s) does not identify z.
AMBIGUOUS = object()


@dataclass(frozen=True)
class FiniteDomain:
    """Named, ordered finite set of symbolic values."""

    name: str
    values: tuple

    def __post_init__(self):
        if len(set(self.values)) != len(self.values):
            raise DomainMismatch(f"domain {self.name!r} has duplicate values")
        if not self.values:
            raise DomainMismatch(f"domain {self.name!r} is empty")

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __contains__(self, value) -> bool:
        return value in self.values

    def index(self, value) -> int:
        try:
            return self.values.index(value)
        except ValueError:
            raise DomainMismatch(
                f"value {value!r} not in domain {self.name!r}"
            ) from None


@dataclass(frozen=True)
class World:
    """One realization of all exogenous factors plus the factual context."""

    u: tuple
    z: Any


@dataclass(frozen=True, eq=False)
class DiscreteScm:
    """Finite structural model; see the module docstring for the semantics.

    ``p_u`` maps full factor tuples to probabilities. ``p_z_given_parents``
    maps tuples of the ``z_parents`` factor values (in declared order; the
    empty tuple when Z is exogenous) to rows over the context domain.
    ``y_values`` / ``s_values`` optionally declare label and stratum order
    (used for deterministic tie-breaks); when absent they are derived in
    enumeration order.
    """

    u_domains: tuple[FiniteDomain, ...]
    z_domain: FiniteDomain
    p_u: Mapping[tuple, float]
    z_parents: tuple[str, ...]
    p_z_given_parents: Mapping[tuple, Mapping[Any, float]]
    x_fn: Callable[[Any, tuple], Any]
    y_fn: Callable[[Any, tuple], Any]
    s_fn: Callable[[Any, tuple, Any], Any]
    y_values: tuple | None = None
    s_values: tuple | None = None
    tables: Mapping[str, Any] | None = field(default=None, repr=False)

    def __post_init__(self):
        names = [d.name for d in self.u_domains]
        if len(set(names)) != len(names):
            raise DomainMismatch("duplicate exogenous factor names")
        unknown = set(self.z_parents) - set(names)
        if unknown:
            raise DomainMismatch(f"z_parents reference unknown factors {unknown}")
        _check_rows(
            {(): dict(zip(self._u_tuples(), (self.p_u[u] for u in self._u_tuples())))},
            "p_u",
        )
        parent_tuples = list(
            itertools.product(
                *(d.values for d in self.u_domains if d.name in self.z_parents)
            )
        )
        rows = {}
        for pt in parent_tuples:
            try:
                row = self.p_z_given_parents[pt]
            except KeyError:
                raise DomainMismatch(f"p_z_given_parents missing row for {pt!r}")
            missing = set(self.z_domain.values) - set(row)
            if missing:
                raise DomainMismatch(
                    f"p_z_given_parents row {pt!r} missing contexts {missing}"
                )
            rows[pt] = row
        _check_rows(rows, "p_z_given_parents")

    def _u_tuples(self) -> Iterable[tuple]:
        tuples = list(itertools.product(*(d.values for d in self.u_domains)))
        missing = [u for u in tuples if u not in self.p_u]
        if missing:
            raise DomainMismatch(f"p_u missing entries, e.g. {missing[0]!r}")
        return tuples

    def z_row(self, u: tuple) -> Mapping[Any, float]:
        """Context distribution for the given factor tuple."""
        key = tuple(
            v for v, d in zip(u, self.u_domains) if d.name in self.z_parents
        )
        return self.p_z_given_parents[key]

    def n_worlds(self) -> int:
        n = len(self.z_domain)
        for d in self.u_domains:
            n *= len(d)
        return n


def _check_rows(rows: Mapping[tuple, Mapping[Any, float]], what: str) -> None:
    for key, row in rows.items():
        total = 0.0
        for value, p in row.items():
            if p < 0:
                raise DomainMismatch(f"{what}[{key!r}][{value!r}] is negative")
            total += p
        if abs(total - 1.0) > _ROW_SUM_TOL:
            raise DomainMismatch(
                f"{what} row {key!r} sums to {total!r}, not 1 within {_ROW_SUM_TOL}"
            )


# --- enumeration and potentials --------------------------------------------


@lru_cache(maxsize=None)
def enumerate_joint(
    scm: DiscreteScm, cap: int = ENUMERATION_CAP
) -> tuple[tuple[World, float], ...]:
    """All positive-mass worlds with their exact probabilities.

    Raises EnumerationTooLarge before materializing anything if the world
    count |Z| * prod |Ui| exceeds the cap.
    """
    if scm.n_worlds() > cap:
        raise EnumerationTooLarge(
            f"{scm.n_worlds()} worlds exceed the cap of {cap}"
        )
    out = []
    for u in itertools.product(*(d.values for d in scm.u_domains)):
        pu = scm.p_u[u]
        if pu == 0.0:
            continue
        row = scm.z_row(u)
        for z in scm.z_domain.values:
            mass = pu * row[z]
            if mass > 0.0:
                out.append((World(u=u, z=z), mass))
    total = sum(m for _, m in out)
    if abs(total - 1.0) > 1e-9:
        raise DomainMismatch(f"joint mass sums to {total!r}")
    return tuple(out)


def potential(scm: DiscreteScm, world: World, z_star: Any) -> tuple:
    """Potential (x, y, s) of a world under the intervention Z := z_star."""
    if z_star not in scm.z_domain:
        raise DomainMismatch(
            f"context {z_star!r} not in domain {scm.z_domain.name!r}"
        )
    if len(world.u) != len(scm.u_domains):
        raise DomainMismatch("world factor tuple has the wrong arity")
    for value, dom in zip(world.u, scm.u_domains):
        if value not in dom:
            raise DomainMismatch(f"value {value!r} not in domain {dom.name!r}")
    x = scm.x_fn(z_star, world.u)
    y = scm.y_fn(z_star, world.u)
    s = scm.s_fn(z_star, world.u, y)
    return x, y, s


def observed(scm: DiscreteScm, world: World) -> tuple:
    """Factual (x, y, s): the potential triple at the world's own context."""
    return potential(scm, world, world.z)


def label_values(scm: DiscreteScm) -> tuple:
    """Label domain: declared order, or first-seen enumeration order."""
    if scm.y_values is not None:
        return tuple(scm.y_values)
    seen = list(dict.fromkeys(observed(scm, w)[1] for w, _ in enumerate_joint(scm)))
    return tuple(seen)


def stratum_values(scm: DiscreteScm) -> tuple:
    """Stratum domain: declared order, or first-seen enumeration order."""
    if scm.s_values is not None:
        return tuple(scm.s_values)
    seen = list(dict.fromkeys(observed(scm, w)[2] for w, _ in enumerate_joint(scm)))
    return tuple(seen)


# --- sampling ---------------------------------------------------------------


def sample_world(scm: DiscreteScm, rng: np.random.Generator) -> World:
    """Draw one world: u ~ p_u, then z from its conditional row."""
    us, pu = _u_arrays(scm)
    u = us[rng.choice(len(us), p=pu)]
    row = scm.z_row(u)
    zs = scm.z_domain.values
    pz = np.array([row[z] for z in zs], dtype=float)
    z = zs[rng.choice(len(zs), p=pz / pz.sum())]
    return World(u=u, z=z)


@lru_cache(maxsize=None)
def _u_arrays(scm: DiscreteScm):
    us = list(itertools.product(*(d.values for d in scm.u_domains)))
    pu = np.array([scm.p_u[u] for u in us], dtype=float)
    return us, pu / pu.sum()


_ANY = object()


@lru_cache(maxsize=None)
def conditional_world_table(scm: DiscreteScm, stratum=_ANY, z=_ANY):
    """Worlds and normalized masses matching the observed (s, z) evidence."""
    worlds, probs = [], []
    for w, mass in enumerate_joint(scm):
        if z is not _ANY and w.z != z:
            continue
        if stratum is not _ANY and observed(scm, w)[2] != stratum:
            continue
        worlds.append(w)
        probs.append(mass)
    if not worlds:
        raise ZeroMassStratum(f"no world with stratum={stratum!r}, z={z!r}")
    p = np.array(probs, dtype=float)
    return tuple(worlds), p / p.sum()


def sample_world_conditional(
    scm: DiscreteScm, rng: np.random.Generator, stratum=_ANY, z=_ANY
) -> World:
    worlds, probs = conditional_world_table(scm, stratum, z)
    return worlds[rng.choice(len(worlds), p=probs)]


# --- exact context recovery and conditional input sampling ------------------


class ExactRecoverer:
    """Recovers z from (x, s) by enumeration; AMBIGUOUS when not unique.

    The recoverable-context assumption says the pair (potential input at z,
    observed stratum) determines z; this object checks it instead of trusting
    it. ``recover`` returns the unique consistent context, or the AMBIGUOUS
    sentinel when zero or several contexts are consistent.
    """

    def __init__(self, scm: DiscreteScm):
        self._index: dict[tuple, set] = {}
        for w, _mass in enumerate_joint(scm):
            s_obs = observed(scm, w)[2]
            for z in scm.z_domain.values:
                x_pot = scm.x_fn(z, w.u)
                self._index.setdefault((x_pot, s_obs), set()).add(z)

    def recover(self, x, s):
        candidates = self._index.get((x, s), set())
        if len(candidates) == 1:
            return next(iter(candidates))
        return AMBIGUOUS

    def __call__(self, x, s):
        return self.recover(x, s)


class ExactConditionalSampler:
    """Exact p(X(z+) | X(z)=x, S=s) by enumeration over worlds.

    Given evidence (x, s), the unique consistent context z is recovered, the
    posterior over worlds w with x_fn(z, u_w) = x and observed stratum s is
    formed, and X(z+) = x_fn(z+, u_w) is pushed through it. ``draw`` samples
    from that conditional; ``conditional_table`` exposes it for analytic use.
    """

    def __init__(self, scm: DiscreteScm):
        self.scm = scm
        self._worlds = enumerate_joint(scm)
        self._s_obs = [observed(scm, w)[2] for w, _ in self._worlds]
        # (x at z, observed s, z) -> world indices
        self._evidence: dict[tuple, list[int]] = {}
        for i, (w, _mass) in enumerate(self._worlds):
            for z in scm.z_domain.values:
                key = (scm.x_fn(z, w.u), self._s_obs[i], z)
                self._evidence.setdefault(key, []).append(i)
        self._tables: dict[tuple, tuple[tuple, np.ndarray]] = {}

    def recover(self, x, s):
        found = [
            z for z in self.scm.z_domain.values if (x, s, z) in self._evidence
        ]
        if not found:
            raise InconsistentEvidence(f"no world consistent with x={x!r}, s={s!r}")
        if len(found) > 1:
            raise AmbiguousContext(
                f"contexts {found!r} all consistent with x={x!r}, s={s!r}"
            )
        return found[0]

    def conditional_table(self, x, s, z_plus):
        """Support and probabilities of X(z+) given the evidence."""
        key = (x, s, z_plus)
        if key in self._tables:
            return self._tables[key]
        if z_plus not in self.scm.z_domain:
            raise DomainMismatch(f"context {z_plus!r} outside the domain")
        z0 = self.recover(x, s)
        idx = self._evidence[(x, s, z0)]
        mass: dict[Any, float] = {}
        total = 0.0
        for i in idx:
            w, m = self._worlds[i]
            xp = self.scm.x_fn(z_plus, w.u)
            mass[xp] = mass.get(xp, 0.0) + m
            total += m
        values = tuple(mass)
        probs = np.array([mass[v] for v in values], dtype=float) / total
        self._tables[key] = (values, probs)
        return values, probs

    def draw(self, x, s, z_plus, rng: np.random.Generator):
        values, probs = self.conditional_table(x, s, z_plus)
        return values[rng.choice(len(values), p=probs)]


def true_conditional_sampler(scm: DiscreteScm) -> ExactConditionalSampler:
    """The exact conditional input sampler for a fixture model."""
    return ExactConditionalSampler(scm)


def exact_recoverer(scm: DiscreteScm) -> ExactRecoverer:
    """The enumeration-backed context recoverer for a fixture model."""
    return ExactRecoverer(scm)


# --- table-backed construction and JSON io ----------------------------------


def _encode_key(*parts) -> str:
    out = []
    for p in parts:
        text = str(p)
        if "|" in text:
            raise DomainMismatch(f"value {p!r} may not contain '|'")
        out.append(text)
    return "|".join(out)


def scm_from_tables(
    u_domains: Iterable[FiniteDomain],
    z_domain: FiniteDomain,
    p_u: Mapping[tuple, float],
    z_parents: Iterable[str],
    p_z_given_parents: Mapping[tuple, Mapping[Any, float]],
    x_table: Mapping[str, Any],
    y_table: Mapping[str, Any],
    s_table: Mapping[str, Any] | None = None,
    y_values: tuple | None = None,
    s_values: tuple | None = None,
) -> DiscreteScm:
    """Build a model whose mechanisms are lookup tables.

    x_table and y_table are keyed ``"z|u1|...|uk"``; s_table is keyed
    ``"z|u1|...|uk|y"``. When s_table is None the stratifier is the constant
    None (the empty stratification).  Missing entries are rejected here, so a
    malformed file fails at load time naming the offending table.
    """
    u_domains = tuple(u_domains)
    for z in z_domain.values:
        for u in itertools.product(*(d.values for d in u_domains)):
            key = _encode_key(z, *u)
            if key not in x_table:
                raise DomainMismatch(f"x_table is missing entry {key!r}")
            if key not in y_table:
                raise DomainMismatch(f"y_table is missing entry {key!r}")
            if s_table is not None:
                s_key = _encode_key(z, *u, y_table[key])
                if s_key not in s_table:
                    raise DomainMismatch(f"s_table is missing entry {s_key!r}")

    def x_fn(z, u):
        return x_table[_encode_key(z, *u)]

    def y_fn(z, u):
        return y_table[_encode_key(z, *u)]

    if s_table is None:
        def s_fn(z, u, y):
            return None
    else:
        def s_fn(z, u, y):
            return s_table[_encode_key(z, *u, y)]

    return DiscreteScm(
        u_domains=tuple(u_domains),
        z_domain=z_domain,
        p_u=dict(p_u),
        z_parents=tuple(z_parents),
        p_z_given_parents={k: dict(v) for k, v in p_z_given_parents.items()},
        x_fn=x_fn,
        y_fn=y_fn,
        s_fn=s_fn,
        y_values=y_values,
        s_values=s_values,
        tables={
            "x": dict(x_table),
            "y": dict(y_table),
            "s": dict(s_table) if s_table is not None else None,
        },
    )


def _nested_to_map(nested, domains: list[FiniteDomain]):
    """Nested probability array in domain order -> {value tuple: p}."""
    out = {}

    def walk(node, prefix):
        depth = len(prefix)
        if depth == len(domains):
            out[tuple(prefix)] = float(node)
            return
        dom = domains[depth]
        if len(node) != len(dom):
            raise DomainMismatch(
                f"array level {depth} has {len(node)} entries, domain "
                f"{dom.name!r} has {len(dom)}"
            )
        for value, child in zip(dom.values, node):
            walk(child, prefix + [value])

    walk(nested, [])
    return out


def _map_to_nested(table, domains: list[FiniteDomain]):
    def build(prefix):
        depth = len(prefix)
        if depth == len(domains):
            return table[tuple(prefix)]
        return [build(prefix + [v]) for v in domains[depth].values]

    return build([])


def load_scm(source) -> DiscreteScm:
    """Load a table-backed model from a JSON file path or parsed dict."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    else:
        doc = source
    u_domains = tuple(
        FiniteDomain(d["name"], tuple(d["values"])) for d in doc["u_domains"]
    )
    z_domain = FiniteDomain(doc["z_domain"]["name"], tuple(doc["z_domain"]["values"]))
    p_u = _nested_to_map(doc["p_u"], list(u_domains))
    z_parents = tuple(doc.get("z_parents", ()))
    parent_domains = [d for d in u_domains if d.name in z_parents]
    flat = _nested_to_map(doc["p_z_given_parents"], parent_domains + [z_domain])
    p_z: dict[tuple, dict] = {}
    for key, p in flat.items():
        p_z.setdefault(key[:-1], {})[key[-1]] = p
    return scm_from_tables(
        u_domains,
        z_domain,
        p_u,
        z_parents,
        p_z,
        doc["x_table"],
        doc["y_table"],
        doc.get("s_table"),
        y_values=tuple(doc["y_values"]) if "y_values" in doc else None,
        s_values=tuple(doc["s_values"]) if "s_values" in doc else None,
    )


def dump_scm(scm: DiscreteScm) -> dict:
    """Serialize a table-backed model to a JSON-ready dict."""
    if scm.tables is None:
        raise ValueError("only table-backed models (scm_from_tables) serialize")
    parent_domains = [d for d in scm.u_domains if d.name in scm.z_parents]
    flat = {
        key + (z,): p
        for key, row in scm.p_z_given_parents.items()
        for z, p in row.items()
    }
    doc = {
        "u_domains": [
            {"name": d.name, "values": list(d.values)} for d in scm.u_domains
        ],
        "z_domain": {"name": scm.z_domain.name, "values": list(scm.z_domain.values)},
        "p_u": _map_to_nested(scm.p_u, list(scm.u_domains)),
        "z_parents": list(scm.z_parents),
        "p_z_given_parents": _map_to_nested(flat, parent_domains + [scm.z_domain]),
        "x_table": scm.tables["x"],
        "y_table": scm.tables["y"],
    }
    if scm.tables["s"] is not None:
        doc["s_table"] = scm.tables["s"]
    if scm.y_values is not None:
        doc["y_values"] = list(scm.y_values)
    if scm.s_values is not None:
        doc["s_values"] = list(scm.s_values)
    return doc
