import json

import numpy as np
import pytest

from reference import permutation_cover_length
from teachdim import oracle
from teachdim.errors import CertificationFailure, InvariantViolation, ParseError, TooLarge, UnreachableState
from teachdim.harness import run_session
from teachdim.oracle import (
    Digraph,
    WalkReplayTeacher,
    atsp_brute_force,
    atsp_held_karp,
    certify_reduction,
    complete_digraph,
    cycle_digraph,
    exact_metal_reduction_instance,
    min_teaching_steps,
    random_digraph,
    reduce_atsp_to_teaching,
)
from teachdim.learner import LearnerSpec


def walk_ok(g, length, walk):
    weights = {}
    for u, v, w in g.edges:
        weights[(u, v)] = min(w, weights.get((u, v), w))
    assert walk[0] == g.start
    assert set(walk) == set(range(g.n))
    assert sum(weights[(u, v)] for u, v in zip(walk, walk[1:])) == length


class TestCoveringWalk:
    def test_k3(self):
        g = complete_digraph(3)
        length, walk = atsp_held_karp(g)
        assert length == 2 == atsp_brute_force(g)
        walk_ok(g, length, walk)

    def test_cycle(self):
        g = cycle_digraph(4)
        assert atsp_held_karp(g) == (3, [0, 1, 2, 3])
        assert atsp_brute_force(g) == 3

    def test_weighted_random(self):
        for seed in range(10):
            g = random_digraph(6, seed=seed, max_weight=9)
            length, walk = atsp_held_karp(g)
            assert length == atsp_brute_force(g)
            walk_ok(g, length, walk)

    def test_corpus_agreement(self):
        for seed in range(60):
            g = random_digraph(2 + seed % 7, seed=seed, edge_prob=0.25)
            length, walk = atsp_held_karp(g)
            assert length == atsp_brute_force(g) == permutation_cover_length(g.n, g.edges, g.start)
            walk_ok(g, length, walk)

    def test_revisits_needed(self):
        # a star: every leaf returns through the hub
        edges = tuple((0, v, 1) for v in (1, 2, 3)) + tuple((v, 0, 1) for v in (1, 2, 3))
        g = Digraph(4, edges, 0)
        length, walk = atsp_held_karp(g)
        assert length == 5 and walk.count(0) == 3

    def test_single_vertex(self):
        assert atsp_held_karp(Digraph(1, (), 0)) == (0, [0])

    def test_errors(self):
        with pytest.raises(UnreachableState):
            atsp_held_karp(Digraph(3, ((0, 1, 1),), 0))
        with pytest.raises(TooLarge):
            atsp_held_karp(complete_digraph(21))
        with pytest.raises(TooLarge):
            atsp_brute_force(complete_digraph(10))
        with pytest.raises(InvariantViolation):
            Digraph(2, ((0, 1, 0),), 0)


class TestReduction:
    def test_k3(self):
        p = reduce_atsp_to_teaching(complete_digraph(3))
        assert p.mdp.num_states == 3 and p.mdp.num_actions == 2 and p.mdp.horizon == 1

    def test_cycle(self):
        p = reduce_atsp_to_teaching(cycle_digraph(4))
        assert p.mdp.horizon == 9

    def test_shape(self):
        for seed in range(10):
            p = reduce_atsp_to_teaching(random_digraph(6, seed=seed))
            m = p.mdp
            for s in range(m.num_states):
                assert m.support(s, 0) == m.support(s, 1)
            assert np.all(p.q0[:, 0] > p.q0[:, 1])
            assert p.target.tolist() == [1] * m.num_states

    def test_needs_unit_weights(self):
        with pytest.raises(InvariantViolation):
            reduce_atsp_to_teaching(random_digraph(5, seed=1, max_weight=5, edge_prob=0.9))


class TestCertification:
    def test_examples(self):
        assert certify_reduction(complete_digraph(3)).length == 2
        cert = certify_reduction(cycle_digraph(4))
        assert cert.length == 3 and cert.horizon_sufficient
        assert cert.session_steps == {"0.0": 4, "0.3": 4, "0.7": 4}

    def test_k3_flags_short_horizon(self):
        cert = certify_reduction(complete_digraph(3))
        assert not cert.horizon_sufficient and cert.horizon == 3

    def test_exact_metal(self):
        p = reduce_atsp_to_teaching(cycle_digraph(5))
        assert exact_metal_reduction_instance(p) == 4

    def test_replay_is_epsilon_independent(self):
        g = random_digraph(7, seed=3)
        length, walk = atsp_held_karp(g)
        for eps in (0.0, 0.3, 0.7, 0.95):
            p = reduce_atsp_to_teaching(g, LearnerSpec(eps), horizon=length + 1)
            for seed in range(3):
                res = run_session(p, 3, teacher=WalkReplayTeacher(p, walk), seed=seed)
                assert res.terminated and res.total_steps == length + 1

    def test_detects_mismatch(self, monkeypatch):
        real = oracle.atsp_held_karp
        monkeypatch.setattr(oracle, "atsp_held_karp", lambda g: (lambda lw: (lw[0] - 1, lw[1]))(real(g)))
        with pytest.raises(CertificationFailure):
            certify_reduction(cycle_digraph(4))

    def test_minimality(self):
        for seed in range(30):
            g = random_digraph(2 + seed % 5, seed=seed, edge_prob=0.3)
            assert min_teaching_steps(g) == atsp_held_karp(g)[0] + 1

    def test_minimality_limit(self):
        with pytest.raises(TooLarge):
            min_teaching_steps(complete_digraph(13))


class TestFiles:
    def test_digraph_round_trip(self, tmp_path):
        g = random_digraph(6, seed=2, max_weight=4)
        oracle.save_digraph(g, tmp_path / "g.json")
        assert oracle.load_digraph(tmp_path / "g.json") == g

    def test_bad_digraph(self, tmp_path):
        (tmp_path / "g.json").write_text(json.dumps({"n": 2, "edges": [[0, 1]]}))
        with pytest.raises(ParseError):
            oracle.load_digraph(tmp_path / "g.json")

    def test_certificate(self, tmp_path):
        oracle.save_certificate(certify_reduction(cycle_digraph(4)), tmp_path / "c.json")
        data = json.loads((tmp_path / "c.json").read_text())
        assert data["length"] == 3 and data["walk"] == [0, 1, 2, 3]
        assert data["certified_epsilons"] == [0.0, 0.3, 0.7]
