import numpy as np
import pytest

from xlalign import (
    AdamState,
    InvariantError,
    PairCorpus,
    TrainConfig,
    adam_step,
    from_arrays,
    init_model,
    load_checkpoint,
    save_checkpoint,
    train_multipair,
    train_supervised,
    train_unsupervised,
)
from xlalign.model import parameter_blocks
from xlalign.trainer import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, EpochSampler, write_trace_csv


def scripted_adam_trace(g_values, lr):
    """Reference implementation of the published update rule on one scalar."""
    theta, m, v = 0.0, 0.0, 0.0
    out = []
    for t, g in enumerate(g_values, start=1):
        m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g
        mhat = m / (1 - ADAM_BETA1**t)
        vhat = v / (1 - ADAM_BETA2**t)
        theta -= lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
        out.append(theta)
    return out


def make_corpus(n=32, l=2, d=4, seed=0, paired=True, offset=0.0):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(n, 1, 1, d))
    xs = np.broadcast_to(base, (n, 1, l, d)).reshape(n, l, d) + 0.05 * rng.normal(size=(n, l, d))
    xt = base.reshape(n, 1, d) + 0.05 * rng.normal(size=(n, l, d)) + offset
    ids = np.arange(n)
    return PairCorpus(
        from_arrays("s", ids, xs), from_arrays("t", ids, xt), paired=paired
    )


def snapshot(model):
    return {k: v.copy() for k, v in parameter_blocks(model)}


def assert_params_equal(a, b):
    assert a.keys() == b.keys()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k], err_msg=k)


class TestAdamStep:
    def test_first_step_moves_less_than_lr(self):
        rng = np.random.default_rng(0)
        params = {"w": rng.normal(size=(3, 4))}
        grads = {"w": rng.normal(size=(3, 4)) * 10}
        before = params["w"].copy()
        state = AdamState.init_like(params)
        adam_step(params, grads, state, lr=0.01)
        delta = np.abs(params["w"] - before)
        assert (delta < 0.01 * (1 + 1e-6)).all()
        assert (delta > 0).all()

    def test_zero_gradient_leaves_parameters_unchanged(self):
        params = {"w": np.ones(5)}
        state = AdamState.init_like(params)
        for _ in range(3):
            adam_step(params, {"w": np.zeros(5)}, state, lr=0.1)
        np.testing.assert_array_equal(params["w"], np.ones(5))

    def test_constant_gradient_matches_scripted_trace(self):
        params = {"x": np.zeros(1)}
        state = AdamState.init_like(params)
        seen = []
        for _ in range(2):
            adam_step(params, {"x": np.full(1, 0.37)}, state, lr=0.05)
            seen.append(float(params["x"][0]))
        np.testing.assert_allclose(seen, scripted_adam_trace([0.37, 0.37], 0.05), rtol=1e-12)

    def test_longer_varying_trace(self):
        rng = np.random.default_rng(1)
        gs = rng.normal(size=10)
        params = {"x": np.zeros(1)}
        state = AdamState.init_like(params)
        seen = []
        for g in gs:
            adam_step(params, {"x": np.array([g])}, state, lr=0.003)
            seen.append(float(params["x"][0]))
        np.testing.assert_allclose(seen, scripted_adam_trace(gs, 0.003), rtol=1e-12)

    def test_shape_mismatch_rejected(self):
        params = {"w": np.zeros(3)}
        state = AdamState.init_like(params)
        with pytest.raises(Exception):
            adam_step(params, {"w": np.zeros((2, 2))}, state, lr=0.1)


class TestEpochSampler:
    def test_epoch_partition_without_replacement(self):
        s = EpochSampler(10, 3, seed=0, namespace=(3, 0, 0))
        seen = np.concatenate([s.next_batch() for _ in range(3)])
        assert len(set(seen.tolist())) == 9  # no repeats within the epoch

    def test_deterministic_and_resumable(self):
        a = EpochSampler(10, 3, seed=5, namespace=(3, 0, 0))
        draws = [a.next_batch() for _ in range(7)]
        b = EpochSampler(10, 3, seed=5, namespace=(3, 0, 0))
        for d in draws[:4]:
            np.testing.assert_array_equal(b.next_batch(), d)
        c = EpochSampler(10, 3, seed=5, namespace=(3, 0, 0), epoch=b.epoch, cursor=b.cursor)
        for d in draws[4:]:
            np.testing.assert_array_equal(c.next_batch(), d)

    def test_batch_larger_than_corpus_rejected(self):
        with pytest.raises(InvariantError):
            EpochSampler(4, 5, seed=0, namespace=(3, 0, 0))


class TestSupervisedTraining:
    def test_zero_steps_returns_initialization(self):
        corpus = make_corpus()
        model = init_model(n_layers=2, d_in=4, mode="supervised")
        before = snapshot(model)
        cfg = TrainConfig(mode="supervised", total_steps=0, batch_size=8, seed=1)
        train_supervised(corpus, model, cfg)
        assert_params_equal(before, snapshot(model))

    def test_determinism_bitwise(self):
        corpus = make_corpus()
        cfg = TrainConfig(mode="supervised", total_steps=25, batch_size=8, seed=7)
        runs = []
        for _ in range(2):
            model = init_model(n_layers=2, d_in=4, mode="supervised")
            train_supervised(corpus, model, cfg)
            runs.append(snapshot(model))
        assert_params_equal(*runs)

    def test_parameters_change_when_gradients_nonzero(self):
        corpus = make_corpus(offset=0.5)
        model = init_model(n_layers=2, d_in=4, mode="supervised")
        before = snapshot(model)
        cfg = TrainConfig(
            mode="supervised", total_steps=10, batch_size=8, seed=2, margin=0.4
        )
        train_supervised(corpus, model, cfg)
        after = snapshot(model)
        assert any(not np.array_equal(before[k], after[k]) for k in before)

    def test_unpaired_corpus_rejected(self):
        corpus = make_corpus(paired=False)
        model = init_model(n_layers=2, d_in=4, mode="supervised")
        with pytest.raises(InvariantError):
            train_supervised(corpus, model, TrainConfig(mode="supervised", batch_size=8))

    def test_degenerate_identical_batch_plateaus_finite(self):
        # every sentence identical: per-anchor loss pins at 2 * margin * n
        n, l, d = 16, 2, 4
        row = np.ones((1, l, d))
        xs = np.repeat(row, n, axis=0)
        corpus = PairCorpus(
            from_arrays("s", np.arange(n), xs),
            from_arrays("t", np.arange(n), xs.copy()),
            paired=True,
        )
        model = init_model(n_layers=l, d_in=d, mode="supervised")
        cfg = TrainConfig(
            mode="supervised", total_steps=12, batch_size=8, seed=3, margin=0.4, n_negatives=2
        )
        _, trace = train_supervised(corpus, model, cfg)
        expected = 2 * cfg.margin * cfg.n_negatives
        for row_ in trace:
            assert np.isfinite(row_.loss_total)
            assert row_.loss_total == pytest.approx(expected)


class TestUnsupervisedTraining:
    def make_model(self, seed=0):
        return init_model(n_layers=2, d_in=4, mode="unsupervised", seed=seed, hidden=6)

    def test_zero_steps_returns_initialization(self):
        corpus = make_corpus(paired=False)
        model = self.make_model()
        before = snapshot(model)
        cfg = TrainConfig(mode="unsupervised", total_steps=0, batch_size=8, seed=1)
        train_unsupervised(corpus, model, cfg)
        assert_params_equal(before, snapshot(model))

    def test_determinism_bitwise(self):
        corpus = make_corpus(paired=False, offset=0.3)
        cfg = TrainConfig(
            mode="unsupervised", total_steps=15, batch_size=8, seed=11, kappa=2, cycle_weight=5.0
        )
        runs = []
        for _ in range(2):
            model = self.make_model(seed=4)
            train_unsupervised(corpus, model, cfg)
            runs.append(snapshot(model))
        assert_params_equal(*runs)

    def test_gradient_routing_discriminator_vs_encoder(self):
        # kappa critic updates touch only critic params; the encoder update
        # touches only extraction + cycle params
        corpus = make_corpus(paired=False, offset=0.3)
        model = self.make_model(seed=5)
        before = snapshot(model)

        cfg = TrainConfig(mode="unsupervised", total_steps=1, batch_size=8, seed=6, kappa=3)
        probe = init_model(n_layers=2, d_in=4, mode="unsupervised", seed=5, hidden=6)
        # freeze the encoder loss by running zero encoder-side steps: emulate by
        # comparing parameter groups after one full step instead
        train_unsupervised(corpus, model, cfg)
        after = snapshot(model)
        enc_keys = ["layer_logits", "weight", "bias", "cycle_forward", "cycle_backward"]
        disc_keys = ["w1", "b1", "w2", "b2"]
        assert any(not np.array_equal(before[k], after[k]) for k in enc_keys)
        assert any(not np.array_equal(before[k], after[k]) for k in disc_keys)
        del probe

    def test_trace_finite_and_consistent(self):
        corpus = make_corpus(paired=False, offset=0.3)
        model = self.make_model(seed=7)
        cfg = TrainConfig(
            mode="unsupervised", total_steps=10, batch_size=8, seed=8, kappa=2, cycle_weight=5.0
        )
        _, trace = train_unsupervised(corpus, model, cfg)
        assert len(trace) == 10
        for row in trace:
            for v in (row.loss_disc, row.loss_adv, row.loss_cycle, row.loss_total):
                assert np.isfinite(v)
            assert row.loss_total == pytest.approx(
                row.loss_adv + cfg.cycle_weight * row.loss_cycle, rel=1e-9, abs=1e-12
            )

    def test_batch_too_large_rejected(self):
        corpus = make_corpus(n=6, paired=False)
        model = self.make_model()
        with pytest.raises(InvariantError):
            train_unsupervised(
                corpus, model, TrainConfig(mode="unsupervised", batch_size=8, total_steps=1)
            )

    def test_critic_lr_only_changes_critic_updates(self):
        # separate critic step size alters the critic trajectory; the first
        # encoder update of step 0 happens before any critic effect differences
        # can touch encoder samplers, so determinism machinery stays intact
        corpus = make_corpus(paired=False, offset=0.3)
        outs = []
        for critic_lr in (None, 1e-4):
            model = self.make_model(seed=9)
            cfg = TrainConfig(
                mode="unsupervised", total_steps=5, batch_size=8, seed=12,
                critic_lr=critic_lr,
            )
            train_unsupervised(corpus, model, cfg)
            outs.append(snapshot(model))
        assert not np.array_equal(outs[0]["w1"], outs[1]["w1"])


class TestMultipair:
    def test_single_corpus_reduces_to_single_pair_trainer(self):
        corpus = make_corpus(offset=0.2)
        cfg = TrainConfig(mode="supervised", total_steps=20, batch_size=8, seed=13, margin=0.2)
        m1 = init_model(n_layers=2, d_in=4, mode="supervised")
        train_supervised(corpus, m1, cfg)
        m2 = init_model(n_layers=2, d_in=4, mode="supervised")
        train_multipair([corpus], m2, cfg)
        assert_params_equal(snapshot(m1), snapshot(m2))

    def test_round_robin_visits_all_corpora(self):
        c1 = make_corpus(seed=1, offset=0.2)
        c2 = make_corpus(seed=2, offset=-0.2)
        cfg = TrainConfig(mode="supervised", total_steps=8, batch_size=8, seed=14, margin=0.3)
        model = init_model(n_layers=2, d_in=4, mode="supervised")
        _, trace = train_multipair([c1, c2], model, cfg)
        assert len(trace) == 8

    def test_empty_list_rejected(self):
        model = init_model(n_layers=2, d_in=4, mode="supervised")
        with pytest.raises(InvariantError):
            train_multipair([], model, TrainConfig(mode="supervised", batch_size=8))

    def test_two_disjoint_pairs_transfer_to_unseen_language(self):
        # equal total data: one pair of 1000 sentences vs two disjoint pairs of
        # 500 each sharing the source language; evaluated zero-shot on a pair
        # with an unseen target language
        from xlalign import SynthConfig, generate, run_retrieval_eval
        from xlalign.feature_store import subset_by_ids

        cfg = SynthConfig(
            latent_dim=8, dim=16, n_layers=2, n_sentences=1200, noise=0.02,
            transform_divergence=0.25, nuisance_dim=4, nuisance_scale=1.5,
            languages=("s", "t1", "t2", "t3"), seed=4,
        )
        corpus = generate(cfg)
        held = np.arange(1000, 1200)
        gold = {int(i): int(i) for i in held}

        def pair(b, ids):
            return PairCorpus(
                subset_by_ids(corpus.language("s"), ids),
                subset_by_ids(corpus.language(b), ids),
                paired=True,
            )

        def transfer_accuracy(model):
            return run_retrieval_eval(
                model,
                subset_by_ids(corpus.language("s"), held),
                subset_by_ids(corpus.language("t3"), held),
                gold,
            ).metrics["accuracy"]

        tc = TrainConfig(mode="supervised", total_steps=600, batch_size=64, seed=0)
        single = init_model(n_layers=2, d_in=16, mode="supervised")
        train_multipair([pair("t1", np.arange(1000))], single, tc)
        multi = init_model(n_layers=2, d_in=16, mode="supervised")
        train_multipair([pair("t1", np.arange(500)), pair("t2", np.arange(500, 1000))], multi, tc)
        assert transfer_accuracy(multi) >= transfer_accuracy(single) - 0.05

    def test_inconsistent_dims_rejected(self):
        c1 = make_corpus(d=4)
        c2 = make_corpus(d=5)
        model = init_model(n_layers=2, d_in=4, mode="supervised")
        with pytest.raises(InvariantError):
            train_multipair([c1, c2], model, TrainConfig(mode="supervised", batch_size=8))


class TestCheckpointing:
    def test_save_load_round_trip(self, tmp_path):
        corpus = make_corpus(offset=0.2, paired=False)
        model = init_model(n_layers=2, d_in=4, mode="unsupervised", seed=1, hidden=6)
        cfg = TrainConfig(mode="unsupervised", total_steps=10, batch_size=8, seed=21)
        train_unsupervised(corpus, model, cfg)
        path = tmp_path / "ckpt.alnm"
        save_checkpoint(path, model)
        got, state = load_checkpoint(path)
        assert_params_equal(snapshot(model), snapshot(got))
        assert state is not None
        assert state.step == 10
        assert state.seed == 21
        np.testing.assert_array_equal(
            state.enc_adam.m["weight"], model._train_state.enc_adam.m["weight"]
        )

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        for mode in ("supervised", "unsupervised"):
            corpus = make_corpus(offset=0.2, paired=(mode == "supervised"))
            cfg_full = TrainConfig(mode=mode, total_steps=20, batch_size=8, seed=22, margin=0.2)

            straight = init_model(n_layers=2, d_in=4, mode=mode, seed=2, hidden=6)
            train_multipair([corpus], straight, cfg_full)

            part = init_model(n_layers=2, d_in=4, mode=mode, seed=2, hidden=6)
            cfg_half = TrainConfig(mode=mode, total_steps=9, batch_size=8, seed=22, margin=0.2)
            train_multipair([corpus], part, cfg_half)
            path = tmp_path / f"{mode}.alnm"
            save_checkpoint(path, part)

            resumed, state = load_checkpoint(path)
            train_multipair([corpus], resumed, cfg_full, resume=state)
            assert_params_equal(snapshot(straight), snapshot(resumed))

    def test_corrupted_magic_rejected(self, tmp_path):
        model = init_model(n_layers=1, d_in=2, mode="supervised")
        path = tmp_path / "x.alnm"
        save_checkpoint(path, model, None)
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        from xlalign import BadMagicError

        with pytest.raises(BadMagicError):
            load_checkpoint(path)

    def test_seed_mismatch_on_resume_rejected(self, tmp_path):
        corpus = make_corpus(offset=0.2)
        model = init_model(n_layers=2, d_in=4, mode="supervised")
        cfg = TrainConfig(mode="supervised", total_steps=5, batch_size=8, seed=30)
        train_supervised(corpus, model, cfg)
        path = tmp_path / "x.alnm"
        save_checkpoint(path, model)
        resumed, state = load_checkpoint(path)
        bad = TrainConfig(mode="supervised", total_steps=10, batch_size=8, seed=31)
        with pytest.raises(InvariantError):
            train_multipair([corpus], resumed, bad, resume=state)


class TestTraceCsv:
    def test_columns_and_determinism(self, tmp_path):
        corpus = make_corpus(offset=0.2)
        model = init_model(n_layers=2, d_in=4, mode="supervised")
        cfg = TrainConfig(mode="supervised", total_steps=5, batch_size=8, seed=2, margin=0.3)
        _, trace = train_supervised(corpus, model, cfg)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_trace_csv(p1, trace)
        write_trace_csv(p2, trace)
        text = p1.read_text()
        assert text.splitlines()[0] == "step,loss_disc,loss_adv,loss_cycle,loss_total"
        assert len(text.splitlines()) == 6
        assert p1.read_bytes() == p2.read_bytes()
