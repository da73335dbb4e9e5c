import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgvqa.agent import (
    AgentGenerator,
    ClassifierConfig,
    InsufficientCandidatesError,
    PolicyAgent,
    PoolMismatchError,
    SemEquivModel,
    fit_classifier,
    is_sem_equiv,
    policy_forward,
    read_generated,
    sample_actions,
    top_k_distractors,
    top_k_from_scores,
    write_generated,
)
from dgvqa.dataset import build_candidate_pool, EmbeddingTable
from dgvqa.kernel import Rng


def agent_for(ds, rng=None, hidden=16, dropout_p=0.5):
    return PolicyAgent.create(ds.d_img, ds.d_txt, ds.pool, rng, hidden, dropout_p)


class TestPolicyForward:
    def test_zero_agent_is_uniform(self, small_ds):
        it = small_ds.items[0]
        p = policy_forward(agent_for(small_ds), it.image_feature, it.question_embedding)
        assert np.allclose(p, 1.0 / small_ds.pool.K, atol=0, rtol=1e-12)

    def test_mode_irrelevant_without_dropout(self, small_ds):
        a = agent_for(small_ds, Rng(0), dropout_p=0.0)
        it = small_ds.items[1]
        p1 = policy_forward(a, it.image_feature, it.question_embedding, "train", Rng(1))
        p2 = policy_forward(a, it.image_feature, it.question_embedding, "eval")
        assert np.array_equal(p1, p2)

    def test_dimension_mismatch(self, small_ds):
        with pytest.raises(ValueError, match="dims"):
            policy_forward(agent_for(small_ds), np.zeros(3), np.zeros(small_ds.d_txt))

    def test_pool_mismatch(self, small_ds):
        other = build_candidate_pool([("x", 1), ("y", 1)], 1, EmbeddingTable({"x": np.ones(8)}, 8))
        it = small_ds.items[0]
        with pytest.raises(PoolMismatchError):
            policy_forward(agent_for(small_ds), it.image_feature, it.question_embedding, pool=other)

    def test_valid_distribution_at_full_pool_size(self):
        from dgvqa.kernel import init_dense

        params = init_dense(40, 32, 1516, Rng(2), np.float32)
        a = PolicyAgent(params, 24, 16, "x", 0.5)
        x = Rng(3).gen.normal(0, 5, (1000, 40))
        p = policy_forward(a, x[:, :24], x[:, 24:])
        assert (p >= 0).all() and np.abs(p.sum(axis=1) - 1).max() <= 1e-9

    def test_checkpoint_round_trip(self, small_ds, tmp_path):
        a = agent_for(small_ds, Rng(0))
        a.save(tmp_path / "a.dfm")
        b = PolicyAgent.load(tmp_path / "a.dfm")
        assert b.params.checksum() == a.params.checksum()
        b.check_pool(small_ds.pool)


class TestSample:
    def test_onehot(self):
        assert (sample_actions(np.eye(5)[3], 50, Rng(0)) == 3).all()

    def test_law_of_large_numbers(self):
        s = sample_actions(np.full(4, 0.25), 100_000, Rng(1))
        freq = np.bincount(s, minlength=4) / s.size
        assert np.abs(freq - 0.25).max() <= 0.01

    def test_matches_skewed_distribution(self):
        p = np.array([0.7, 0.2, 0.1, 0.0])
        s = sample_actions(p, 100_000, Rng(2))
        assert np.abs(np.bincount(s, minlength=4) / s.size - p).max() <= 0.01
        assert not (s == 3).any()

    def test_deterministic(self):
        p = np.array([0.1, 0.3, 0.6])
        assert np.array_equal(sample_actions(p, 20, Rng(7)), sample_actions(p, 20, Rng(7)))

    def test_batched_rows(self):
        d = np.eye(3)[[2, 0]]
        assert sample_actions(d, 4, Rng(0)).tolist() == [[2] * 4, [0] * 4]


class TestSemEquiv:
    def test_reflexive_and_symmetric(self, small_sem, small_ds):
        K = small_ds.pool.K
        assert all(is_sem_equiv(small_sem, i, i) for i in range(K))
        assert np.array_equal(small_sem.equiv, small_sem.equiv.T)

    def test_orthogonal_not_equivalent(self):
        table = EmbeddingTable({"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0])}, 2)
        pool = build_candidate_pool([("a", 1), ("b", 1)], 1, table)
        assert not is_sem_equiv(SemEquivModel(pool, 0.9), 0, 1)

    def test_cosine_ignores_norm(self):
        table = EmbeddingTable({"a": np.array([1.0, 0.0]), "b": np.array([5.0, 0.1])}, 2)
        pool = build_candidate_pool([("a", 1), ("b", 1)], 1, table)
        assert is_sem_equiv(SemEquivModel(pool, 0.95), 0, 1)

    def test_pair_count_monotone_in_tau(self, small_ds):
        emb = small_ds.pool.embeddings.astype(np.float64)
        K = len(emb)
        prev = None
        for tau in np.linspace(0, 1, 21):
            sem = SemEquivModel(small_ds.pool, tau)
            brute = sum(
                1 for i in range(K) for j in range(K)
                if i == j or emb[i] @ emb[j] / np.linalg.norm(emb[i]) / np.linalg.norm(emb[j]) >= tau - 1e-12
            )
            n = int(sem.equiv.sum())
            assert abs(n - brute) <= 2  # only exact-threshold rounding may differ
            assert prev is None or n <= prev
            prev = n


class TestTopK:
    def test_zero_agent_picks_lowest_survivors(self, small_ds, small_sem):
        it = small_ds.items[0]
        out = top_k_distractors(agent_for(small_ds), it, small_sem)
        survivors = [j for j in range(small_ds.pool.K) if not small_sem(it.correct_id, j)]
        assert out.tolist() == survivors[:3]

    def test_exclusion_rule(self):
        scores = np.array([0.0, 5.0, 1.0, 4.0, 3.0, 2.0])  # correct=1, then 3, 4, 5, 2
        excluded = np.zeros(6, bool)
        excluded[1] = True
        assert top_k_from_scores(scores, excluded).tolist() == [3, 4, 5]

    def test_ties_to_lower_index(self):
        assert top_k_from_scores(np.array([1.0, 2, 2, 2, 2]), np.zeros(5, bool)).tolist() == [1, 2, 3]

    def test_insufficient(self):
        with pytest.raises(InsufficientCandidatesError):
            top_k_from_scores(np.zeros(4), np.array([True, True, False, False]))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 100.0))
    def test_depends_only_on_ordering(self, seed, scale):
        z = np.random.default_rng(seed).normal(size=30)
        ex = np.random.default_rng(seed + 1).random(30) < 0.3
        assert np.array_equal(top_k_from_scores(z, ex), top_k_from_scores(z * scale, ex))

    def test_never_equivalent_across_fixture(self, small_ds, small_sem):
        gen = AgentGenerator(agent_for(small_ds, Rng(1)), small_sem)
        out = gen.generate(small_ds, small_ds.split_indices("all"))
        for row, it in zip(out, small_ds.items):
            assert len(set(row.tolist())) == 3
            assert not any(small_sem(it.correct_id, int(j)) for j in row)

    def test_batched_generate_matches_single(self, small_ds, small_sem):
        gen = AgentGenerator(agent_for(small_ds, Rng(1)), small_sem)
        idx = small_ds.split_indices("test")[:20]
        batch = gen.generate(small_ds, idx)
        assert batch.tolist() == [list(gen(small_ds.items[i])) for i in idx]


def test_generated_file_round_trip(small_ds, small_sem, tmp_path):
    gen = AgentGenerator(agent_for(small_ds, Rng(1)), small_sem)
    idx = small_ds.split_indices("test")[:5]
    ids = gen.generate(small_ds, idx)
    write_generated(tmp_path / "g.jsonl", small_ds, idx, ids, "mlpr", gen.probabilities(small_ds, idx, ids))
    recs = read_generated(tmp_path / "g.jsonl")
    assert [r["distractor_ids"] for r in recs] == ids.tolist()
    assert recs[0]["distractor_texts"][0] == small_ds.pool.texts[ids[0, 0]]
    assert all(0 < p < 1 for r in recs for p in r["policy_probs"])


def test_fit_classifier_raises_target_probability(small_ds):
    a = agent_for(small_ds, Rng(0), hidden=32)
    idx = small_ds.split_indices("train")
    x, y = small_ds.features(idx), small_ds.correct_ids[idx]
    before = policy_forward(a, x[:, : small_ds.d_img], x[:, small_ds.d_img :])[np.arange(len(y)), y].mean()
    fit_classifier(a, x, y, ClassifierConfig(epochs=20, lr=1e-2), Rng(1))
    after = policy_forward(a, x[:, : small_ds.d_img], x[:, small_ds.d_img :])[np.arange(len(y)), y].mean()
    assert after > before
