"""Exact enumeration, recovery and conditional sampling on tiny hand models."""

import json

import numpy as np
import pytest

from stratinv.errors import (
    AmbiguousContext,
    DomainMismatch,
    InconsistentEvidence,
    ZeroMassStratum,
)
from stratinv.scm import (
    AMBIGUOUS,
    DiscreteScm,
    ExactConditionalSampler,
    ExactRecoverer,
    FiniteDomain,
    World,
    dump_scm,
    enumerate_joint,
    load_scm,
    observed,
    potential,
    sample_world,
    sample_world_conditional,
    scm_from_tables,
    stratum_values,
)


def tiny_scm():
    """One binary factor driving z: joint masses 0.125/0.125/0.15/0.6."""
    return DiscreteScm(
        u_domains=(FiniteDomain("u1", (0, 1)),),
        z_domain=FiniteDomain("z", ("za", "zb")),
        p_u={(0,): 0.25, (1,): 0.75},
        z_parents=("u1",),
        p_z_given_parents={
            (0,): {"za": 0.5, "zb": 0.5},
            (1,): {"za": 0.2, "zb": 0.8},
        },
        x_fn=lambda z, u: f"ctx={z} u1={u[0]}",
        y_fn=lambda z, u: u[0],
        s_fn=lambda z, u, y: "all",
        y_values=(0, 1),
        s_values=("all",),
    )


def test_enumerate_joint_masses():
    joint = {(w.u, w.z): m for w, m in enumerate_joint(tiny_scm())}
    assert joint[((0,), "za")] == pytest.approx(0.125)
    assert joint[((0,), "zb")] == pytest.approx(0.125)
    assert joint[((1,), "za")] == pytest.approx(0.15)
    assert joint[((1,), "zb")] == pytest.approx(0.6)
    assert sum(joint.values()) == pytest.approx(1.0)


def test_potential_vs_observed():
    scm = tiny_scm()
    w = World(u=(1,), z="za")
    assert observed(scm, w) == ("ctx=za u1=1", 1, "all")
    # intervening on z changes the rendered context but not the label
    assert potential(scm, w, "zb") == ("ctx=zb u1=1", 1, "all")


def test_domain_validation():
    with pytest.raises(DomainMismatch):
        FiniteDomain("d", ("a", "a"))
    with pytest.raises(DomainMismatch):
        FiniteDomain("d", ())
    scm = tiny_scm()
    with pytest.raises(DomainMismatch):
        potential(scm, World(u=(2,), z="za"), "za")


def test_bad_probability_row_rejected():
    with pytest.raises(DomainMismatch):
        DiscreteScm(
            u_domains=(FiniteDomain("u1", (0, 1)),),
            z_domain=FiniteDomain("z", ("za", "zb")),
            p_u={(0,): 0.6, (1,): 0.6},  # sums to 1.2
            z_parents=(),
            p_z_given_parents={(): {"za": 0.5, "zb": 0.5}},
            x_fn=lambda z, u: "x",
            y_fn=lambda z, u: 0,
            s_fn=lambda z, u, y: None,
        )


def test_sample_world_frequencies():
    scm = tiny_scm()
    rng = np.random.default_rng(3)
    n = 8000
    hits = sum(
        1 for _ in range(n)
        if (lambda w: w.u == (1,) and w.z == "zb")(sample_world(scm, rng))
    )
    # binomial(8000, 0.6): 3 sigma is about 0.016
    assert abs(hits / n - 0.6) < 0.02


def test_sample_world_conditional_respects_evidence():
    scm = tiny_scm()
    rng = np.random.default_rng(4)
    for _ in range(50):
        w = sample_world_conditional(scm, rng, stratum="all", z="za")
        assert w.z == "za"
    with pytest.raises(ZeroMassStratum):
        sample_world_conditional(scm, rng, stratum="missing", z="za")


def test_exact_recoverer():
    scm = tiny_scm()
    rec = ExactRecoverer(scm)
    assert rec.recover("ctx=zb u1=1", "all") == "zb"

    # drop the ctx token and both contexts become consistent
    blind = DiscreteScm(
        u_domains=scm.u_domains,
        z_domain=scm.z_domain,
        p_u=scm.p_u,
        z_parents=scm.z_parents,
        p_z_given_parents=scm.p_z_given_parents,
        x_fn=lambda z, u: f"u1={u[0]}",
        y_fn=scm.y_fn,
        s_fn=scm.s_fn,
        y_values=scm.y_values,
        s_values=scm.s_values,
    )
    assert ExactRecoverer(blind).recover("u1=1", "all") is AMBIGUOUS


def test_conditional_sampler_posterior():
    # Two factors, x reveals u1 only under za. Conditioning on the potential
    # event {X(za)="ctx=za r=0", S="all"} pins u1=0, leaves u2 fair, so
    # X(zb) = "ctx=zb r=<u2>" should be 50/50.
    x_table = {}
    y_table = {}
    for z in ("za", "zb"):
        for u1 in (0, 1):
            for u2 in (0, 1):
                r = u1 if z == "za" else u2
                x_table[f"{z}|{u1}|{u2}"] = f"ctx={z} r={r}"
                y_table[f"{z}|{u1}|{u2}"] = u1
    scm = scm_from_tables(
        (FiniteDomain("u1", (0, 1)), FiniteDomain("u2", (0, 1))),
        FiniteDomain("z", ("za", "zb")),
        {(a, b): 0.25 for a in (0, 1) for b in (0, 1)},
        (),
        {(): {"za": 0.5, "zb": 0.5}},
        x_table,
        y_table,
        None,
        y_values=(0, 1),
    )
    sampler = ExactConditionalSampler(scm)
    values, probs = sampler.conditional_table("ctx=za r=0", None, "zb")
    law = dict(zip(values, probs))
    assert law == {
        "ctx=zb r=0": pytest.approx(0.5),
        "ctx=zb r=1": pytest.approx(0.5),
    }
    # same event, resampled to za: degenerate at the original input
    values, probs = sampler.conditional_table("ctx=za r=0", None, "za")
    assert dict(zip(values, probs)) == {"ctx=za r=0": pytest.approx(1.0)}

    with pytest.raises(InconsistentEvidence):
        sampler.conditional_table("ctx=za r=7", None, "zb")


def test_conditional_sampler_ambiguous_context():
    scm = tiny_scm()
    blind_tables = {
        f"{z}|{u}": f"u1={u}" for z in ("za", "zb") for u in (0, 1)
    }
    y = {f"{z}|{u}": u for z in ("za", "zb") for u in (0, 1)}
    blind = scm_from_tables(
        scm.u_domains, scm.z_domain, scm.p_u, scm.z_parents,
        scm.p_z_given_parents, blind_tables, y, None,
    )
    with pytest.raises(AmbiguousContext):
        ExactConditionalSampler(blind).conditional_table("u1=1", None, "za")


def test_scm_json_round_trip(tmp_path):
    from stratinv.fixtures import random_fixture_scm

    scm = random_fixture_scm(seed=5, n_contexts=2, n_factors=2, s_mode="u1")
    path = tmp_path / "scm.json"
    path.write_text(json.dumps(dump_scm(scm)))
    again = load_scm(path)
    original = {(w.u, w.z): m for w, m in enumerate_joint(scm)}
    loaded = {(w.u, w.z): m for w, m in enumerate_joint(again)}
    assert set(original) == set(loaded)
    for key in original:
        assert original[key] == pytest.approx(loaded[key])
        w = World(u=key[0], z=key[1])
        assert observed(scm, w) == observed(again, w)
    assert stratum_values(scm) == stratum_values(again)


def test_missing_table_entry_named(tmp_path):
    doc = dump_scm(
        scm_from_tables(
            (FiniteDomain("u1", (0, 1)),),
            FiniteDomain("z", ("za", "zb")),
            {(0,): 0.5, (1,): 0.5},
            (),
            {(): {"za": 0.5, "zb": 0.5}},
            {f"{z}|{u}": f"ctx={z}" for z in ("za", "zb") for u in (0, 1)},
            {f"{z}|{u}": u for z in ("za", "zb") for u in (0, 1)},
            None,
        )
    )
    del doc["y_table"]["zb|1"]
    with pytest.raises(DomainMismatch, match="y_table.*zb|1"):
        load_scm(doc)
