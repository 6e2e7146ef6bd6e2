import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hierg.expert import CostModel
from hierg.theory import (BoundParams, BoundViolated, SyntheticInstance,
                          bound_flat, bound_hier, cost_ratio, random_instance,
                          run_flat_halving, run_hier_halving,
                          verification_sweep, verify_bounds)


def _params(**kw):
    defaults = dict(episodes=10, size_m=8, size_pi_lo=4, size_g=2,
                    size_g_star=2, h_hi=3, h_lo=5, h_full=15,
                    costs=CostModel(full_inspect=1, full_label=20, hi_label=3,
                                    lo_inspect=1, lo_label=5))
    defaults.update(kw)
    return BoundParams(**defaults)


def test_bound_hier_worked_example():
    assert bound_hier(_params()) == 72.0


def test_bound_flat_worked_example():
    assert bound_flat(_params()) == 150.0


def test_bounds_trivial_classes():
    p = _params(size_m=1, size_pi_lo=1)
    assert bound_hier(p) == 10.0      # pure monitoring
    p2 = _params(costs=CostModel(full_inspect=1, full_label=0, hi_label=3,
                                 lo_inspect=1, lo_label=5))
    assert bound_flat(p2) == 10.0


def test_bound_hier_doubling_increment():
    base = _params()
    doubled = _params(size_pi_lo=8)
    # doubling the LO class adds |G*| * (C_hi^L + H_hi C_lo^I + C_lo^L)
    assert bound_hier(doubled) - bound_hier(base) == pytest.approx(
        2 * (3 + 3 * 1 + 5))


def test_cost_ratio_per_step_convention():
    p = _params(h_hi=10, h_lo=10, h_full=100,
                costs=CostModel(full_inspect=1, full_label=100, hi_label=10,
                                lo_inspect=1, lo_label=10))
    assert cost_ratio(p) == pytest.approx(0.3)
    zero = _params(costs=CostModel(full_inspect=1, full_label=5, hi_label=0,
                                   lo_inspect=0, lo_label=0))
    assert cost_ratio(zero) == 0.0
    with pytest.raises(ZeroDivisionError):
        cost_ratio(_params(costs=CostModel(full_inspect=1, full_label=0,
                                           hi_label=3, lo_inspect=1,
                                           lo_label=5)))


def test_bound_params_validation():
    with pytest.raises(ValueError):
        _params(size_g_star=3)        # G* > G
    with pytest.raises(ValueError):
        _params(size_m=0)
    with pytest.raises(ValueError):
        _params(costs=CostModel())    # per-step costs rejected


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 50), st.integers(1, 256), st.integers(1, 256),
       st.integers(1, 5), st.integers(1, 20),
       st.tuples(*[st.integers(0, 30) for _ in range(5)]))
def test_learning_cost_ratio_dominated(T, m, pi, gstar, h_hi, costs):
    """(Eq1 - T C^I) / (Eq2 - T C^I) <= cost_ratio whenever defined."""
    ci, cfl, chl, cli, cll = costs
    if cfl == 0:
        return
    p = BoundParams(episodes=T, size_m=m, size_pi_lo=pi, size_g=gstar,
                    size_g_star=gstar, h_hi=h_hi, h_lo=5, h_full=100,
                    costs=CostModel(full_inspect=ci, full_label=cfl,
                                    hi_label=chl, lo_inspect=cli,
                                    lo_label=cll))
    learn_hier = bound_hier(p) - T * ci
    learn_flat = bound_flat(p) - T * ci
    if learn_flat <= 0:
        return
    assert learn_hier / learn_flat <= cost_ratio(p) + 1e-12


def test_bound_monotone_in_sizes():
    base = _params()
    assert bound_hier(_params(size_m=16)) >= bound_hier(base)
    assert bound_hier(_params(size_pi_lo=8)) >= bound_hier(base)
    assert bound_flat(_params(size_g=3)) >= bound_flat(base)
    assert bound_flat(_params(episodes=20)) >= bound_flat(base)


def test_instance_realizability_and_shapes():
    inst = random_instance(7)
    assert inst.meta_outputs.shape[1] == inst.n_rooms
    assert inst.lo_outputs.shape[1] == inst.n_lo_states
    assert len(inst.meta_outputs) <= 256 and len(inst.lo_outputs) <= 256
    # expert rows present
    from hierg.theory import expert_lo_row, expert_meta_row
    assert np.array_equal(inst.meta_outputs[inst.expert_meta],
                          expert_meta_row(inst.n_rooms))
    for g in range(3):
        assert np.array_equal(inst.lo_outputs[inst.expert_lo[g]],
                              expert_lo_row(inst.n_lo_states, inst.room_len, g))


def test_expert_run_is_free_of_learning_cost():
    """With singleton classes the learner equals the expert from round one:
    the only cost is monitoring."""
    inst = random_instance(11)
    from hierg.theory import expert_lo_row, expert_meta_row
    meta = expert_meta_row(inst.n_rooms).reshape(1, -1)
    lo = np.vstack([expert_lo_row(inst.n_lo_states, inst.room_len, g)
                    for g in range(3)])
    # deduplicate while keeping all expert rows addressable
    singleton = SyntheticInstance(
        n_rooms=inst.n_rooms, room_len=inst.room_len, start=inst.start,
        meta_outputs=meta, lo_outputs=lo, expert_meta=0,
        expert_lo=(0, 1, 2), costs=inst.costs, episodes=17, seed=999)
    stats = run_hier_halving(singleton)
    assert stats.labeled_episodes == 0
    assert stats.total_cost == 17 * singleton.costs.full_inspect
    flat = run_flat_halving(singleton)
    assert flat.total_cost == 17 * singleton.costs.full_inspect


def test_verify_bounds_single_instance():
    report = verify_bounds(random_instance(123))
    assert report.ok
    assert report.realized_hier <= report.bound_hier
    assert report.realized_flat <= report.bound_flat
    assert "OK" in report.summary()


def test_verification_sweep_no_violations():
    reports = verification_sweep(50, seed0=5000)
    assert all(r.ok for r in reports)
    for r in reports:
        log_m = math.log2(r.params.size_m)
        log_p = math.log2(r.params.size_pi_lo)
        assert r.hi_mistakes_hier <= log_m
        assert r.hi_mistakes_flat <= log_m
        assert all(v <= log_p for v in r.lo_mistakes_hier.values())
        assert all(v <= log_p for v in r.lo_mistakes_flat.values())


def test_mistakes_match_version_space_halving():
    """Each counted HI mistake halves the meta version space."""
    from hierg.learners import VersionSpace
    inst = random_instance(77)
    vs = VersionSpace(inst.meta_outputs, 3)
    sizes = [vs.alive_count]
    mistakes = 0
    rng = np.random.default_rng(0)
    for _ in range(40):
        room = int(rng.integers(inst.n_rooms))
        correct = int(inst.meta_outputs[inst.expert_meta, room])
        before = vs.alive_count
        if vs.update(room, correct):
            mistakes += 1
            assert vs.alive_count * 2 <= before
    assert mistakes <= math.log2(len(inst.meta_outputs))
