"""Client lifecycle: contribution prediction, local training, upload noise,
and the privacy boundary of the wire formats."""

import hashlib
import math

import numpy as np
import pytest

from fedrec import client as client_mod
from fedrec import numkernel as nk
from fedrec import proxyncf, server
from fedrec.errors import ConfigurationError, EmptyDatasetError

LN2 = math.log(2.0)


def make_global(n_items=30, d=4, h=6, seed=0):
    return server.init_global_model(n_items, d, h, np.random.default_rng(seed))


def make_client(train_items, d=4, seed=1, val_items=()):
    return client_mod.init_client(0, tuple(train_items), tuple(val_items), d,
                                  np.random.default_rng(seed))


def model_digest(model):
    h = hashlib.sha256()
    h.update(model.item_table.tobytes())
    for name in sorted(model.params.as_dict()):
        h.update(model.params.as_dict()[name].tobytes())
    return h.hexdigest()


class TestPredictContribution:
    def test_zero_weight_proxy_gives_ln2_per_triplet(self):
        model = make_global()
        model.params.proxy = nk.zeros_like_mlp(model.params.proxy)
        cl = make_client([0, 1, 2, 3])
        report = client_mod.predict_contribution(cl, model, 100, np.random.default_rng(2))
        assert abs(report.predicted_loss - 4 * LN2) < 1e-12

    def test_no_scaling_when_batch_fits(self):
        model = make_global(seed=3)
        cl = make_client([4, 9, 11])
        rng_a = np.random.default_rng(5)
        report = client_mod.predict_contribution(cl, model, 3, rng_a)
        # recompute the same batch and sum predictions directly
        rng_b = np.random.default_rng(5)
        batch = client_mod._report_batch(cl, model.item_table.shape[0], rng_b)
        expected = sum(
            proxyncf.proxy_predict_triplet(
                cl.user_embedding, model.item_table[t.pos_item], model.item_table[t.neg_item],
                model.params)
            for t in batch)
        assert abs(report.predicted_loss - expected) < 1e-10

    def test_subsampled_estimate_close_to_full(self):
        model = make_global(n_items=60, seed=6)
        cl = make_client(list(range(0, 48)), seed=7)
        full = client_mod.predict_contribution(cl, model, 10_000, np.random.default_rng(8))
        estimates = [
            client_mod.predict_contribution(cl, model, 16, np.random.default_rng(100 + i))
            .predicted_loss
            for i in range(10)
        ]
        assert abs(np.mean(estimates) - full.predicted_loss) / full.predicted_loss < 0.10

    def test_report_is_nonnegative_and_finite(self):
        model = make_global(seed=9)
        cl = make_client([1, 2])
        report = client_mod.predict_contribution(cl, model, 10, np.random.default_rng(3))
        assert report.predicted_loss >= 0.0 and math.isfinite(report.predicted_loss)

    def test_no_writes_to_snapshot(self):
        model = make_global(seed=10)
        before = model_digest(model)
        cl = make_client([0, 5, 7])
        client_mod.predict_contribution(cl, model, 10, np.random.default_rng(4))
        assert model_digest(model) == before

    def test_no_train_items_rejected(self):
        model = make_global()
        cl = make_client([])
        with pytest.raises(EmptyDatasetError):
            client_mod.predict_contribution(cl, model, 10, np.random.default_rng(0))


class TestLocalTrain:
    def test_zero_epochs_zero_deltas(self):
        model = make_global(seed=11)
        cl = make_client([0, 1])
        upd = client_mod.local_train(cl, model, 0, 4, 0.01, np.random.default_rng(5))
        assert upd.touched_items == ()
        assert not upd.delta_items
        assert not upd.delta_ncf.W1.any() and not upd.delta_proxy.W1.any()
        assert upd.sample_count == 2

    def test_touched_items_are_positives_and_negatives_exactly(self):
        model = make_global(seed=12)
        cl = make_client([3, 8])
        rng = np.random.default_rng(6)
        upd = client_mod.local_train(cl, model, 2, 3, 0.01, rng)
        assert set(upd.delta_items) == set(upd.touched_items)
        assert {3, 8} <= set(upd.touched_items)
        # every touched row moved or is a positive that moved
        for i, delta in upd.delta_items.items():
            assert delta.shape == (4,)

    def test_loss_decreases_over_epochs(self):
        model = make_global(n_items=15, seed=13)
        cl = make_client([2], seed=14)
        rng = np.random.default_rng(7)
        # track the loss on a fixed probe batch across a long local run
        probe = client_mod._report_batch(cl, 15, np.random.default_rng(8))
        losses = []
        snapshot_table = model.item_table.copy()
        for _ in range(50):
            upd = client_mod.local_train(cl, model, 1, 1, 0.01, rng)
            for i, delta in upd.delta_items.items():
                model.item_table[i] += delta
            model.params.ncf = nk.add_mlp(model.params.ncf, upd.delta_ncf)
            model.params.proxy = nk.add_mlp(model.params.proxy, upd.delta_proxy)
            out = proxyncf.client_losses(model.params, cl.user_embedding,
                                         model.item_table, probe)
            losses.append(out.l_ncf)
        upticks = sum(1 for a, b in zip(losses, losses[1:]) if b > a + 1e-9)
        assert losses[-1] < losses[0]
        assert upticks <= len(losses) * 0.05
        model.item_table[:] = snapshot_table  # tidiness; model is throwaway

    def test_deterministic_given_seed(self):
        model = make_global(seed=15)
        cl_a = make_client([1, 4, 6], seed=16)
        cl_b = make_client([1, 4, 6], seed=16)
        upd_a = client_mod.local_train(cl_a, model, 2, 2, 0.01, np.random.default_rng(9))
        upd_b = client_mod.local_train(cl_b, model, 2, 2, 0.01, np.random.default_rng(9))
        assert set(upd_a.delta_items) == set(upd_b.delta_items)
        for i in upd_a.delta_items:
            assert np.array_equal(upd_a.delta_items[i], upd_b.delta_items[i])
        assert np.array_equal(upd_a.delta_ncf.W1, upd_b.delta_ncf.W1)
        assert np.array_equal(cl_a.user_embedding, cl_b.user_embedding)

    def test_user_embedding_updated_locally_never_uploaded(self):
        model = make_global(seed=17)
        cl = make_client([0, 2], seed=18)
        before = cl.user_embedding.copy()
        upd = client_mod.local_train(cl, model, 2, 2, 0.05, np.random.default_rng(10))
        assert not np.array_equal(cl.user_embedding, before)
        assert not hasattr(upd, "user_embedding")

    def test_snapshot_untouched_by_local_training(self):
        model = make_global(seed=19)
        before = model_digest(model)
        cl = make_client([0, 1, 2])
        client_mod.local_train(cl, model, 2, 2, 0.01, np.random.default_rng(11))
        assert model_digest(model) == before


class TestTrainedContribution:
    def test_reports_loss_and_leaves_client_state(self):
        model = make_global(seed=20)
        cl = make_client([0, 1, 5], seed=21)
        emb_before = cl.user_embedding.copy()
        report = client_mod.trained_contribution(cl, model, 2, 2, 0.01,
                                                 np.random.default_rng(12))
        assert math.isfinite(report.predicted_loss) and report.predicted_loss >= 0
        assert np.array_equal(cl.user_embedding, emb_before)

    def test_training_lowers_reported_loss_vs_snapshot(self):
        model = make_global(n_items=12, seed=22)
        cl = make_client([0, 1, 2, 3], seed=23)
        base = client_mod.true_contribution(cl, model, np.random.default_rng(13))
        trained = client_mod.trained_contribution(cl, model, 10, 2, 0.02,
                                                  np.random.default_rng(13))
        assert trained.predicted_loss < base


class TestApplyLdp:
    def make_update(self, seed=0):
        model = make_global(seed=seed)
        cl = make_client([0, 1, 3], seed=seed + 1)
        return model, client_mod.local_train(cl, model, 1, 2, 0.01,
                                             np.random.default_rng(seed + 2))

    def test_sigma_zero_identity(self):
        _, upd = self.make_update()
        out = client_mod.apply_ldp(upd, 0.0, np.random.default_rng(0))
        assert out is upd
        assert client_mod.serialize_update(out) == client_mod.serialize_update(upd)

    def test_noise_magnitude(self):
        rng = np.random.default_rng(1)
        d = 10
        update = client_mod.LocalUpdate(
            user_id=0,
            delta_items={i: np.zeros(d) for i in range(10_000)},
            delta_ncf=nk.MlpParams(np.zeros((2, 2 * d)), np.zeros(2), np.zeros((1, 2)), np.zeros(1)),
            delta_proxy=nk.MlpParams(np.zeros((2, 2 * d)), np.zeros(2), np.zeros((1, 2)), np.zeros(1)),
            sample_count=1,
            touched_items=tuple(range(10_000)),
        )
        noised = client_mod.apply_ldp(update, 0.1, rng)
        flat = np.concatenate([noised.delta_items[i] for i in range(10_000)])
        assert flat.size == 100_000
        assert abs(flat.std() - 0.1) / 0.1 < 0.02

    def test_full_table_mode_covers_catalog(self):
        model, upd = self.make_update(seed=3)
        n = model.item_table.shape[0]
        noised = client_mod.apply_ldp(upd, 0.05, np.random.default_rng(2),
                                      full_table=True, num_items=n)
        assert len(noised.delta_items) == n
        assert not np.array_equal(noised.delta_ncf.W1, upd.delta_ncf.W1)

    def test_negative_sigma_rejected(self):
        _, upd = self.make_update(seed=4)
        with pytest.raises(ConfigurationError):
            client_mod.apply_ldp(upd, -1.0, np.random.default_rng(0))


class TestWireFormat:
    def test_update_roundtrip(self):
        model = make_global(seed=24)
        cl = make_client([0, 2, 7], seed=25)
        upd = client_mod.local_train(cl, model, 1, 2, 0.01, np.random.default_rng(14))
        payload = client_mod.serialize_update(upd)
        back = client_mod.deserialize_update(payload)
        assert back.user_id == upd.user_id
        assert back.sample_count == upd.sample_count
        assert set(back.delta_items) == set(upd.delta_items)
        for i in upd.delta_items:
            assert np.array_equal(back.delta_items[i], upd.delta_items[i])
        assert np.array_equal(back.delta_ncf.W1, upd.delta_ncf.W1)
        assert np.array_equal(back.delta_proxy.b2, upd.delta_proxy.b2)

    def test_update_bytes_stable(self):
        model = make_global(seed=26)
        cl = make_client([1, 2], seed=27)
        upd = client_mod.local_train(cl, model, 1, 1, 0.01, np.random.default_rng(15))
        assert client_mod.serialize_update(upd) == client_mod.serialize_update(upd)

    def test_payload_schema_has_no_private_fields(self):
        """The wire format carries exactly: ids, sample count, item-row deltas,
        MLP deltas. No user embedding, no raw (user, item) pairs."""
        model = make_global(seed=28)
        cl = make_client([0, 1], seed=29)
        upd = client_mod.local_train(cl, model, 1, 1, 0.01, np.random.default_rng(16))
        back = client_mod.deserialize_update(client_mod.serialize_update(upd))
        allowed = {"user_id", "delta_items", "delta_ncf", "delta_proxy",
                   "sample_count", "touched_items"}
        assert set(vars(back)) == allowed
        assert not hasattr(back, "user_embedding")
        assert not hasattr(back, "train_items")
        # the embedding bytes themselves must not appear in the payload
        payload = client_mod.serialize_update(upd)
        assert cl.user_embedding.tobytes() not in payload

    def test_report_roundtrip(self):
        rep = client_mod.ContributionReport(12, 3.25)
        back = client_mod.deserialize_report(client_mod.serialize_report(rep))
        assert back == rep

    def test_report_schema(self):
        payload = client_mod.serialize_report(client_mod.ContributionReport(3, 1.5))
        assert len(payload) == 4 + 4 + 8  # magic, user id, loss scalar
