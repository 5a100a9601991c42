"""Dynamics decoder: message gating, reconstruction paths, rollouts, losses."""

import numpy as np
import pytest

from cordcpd.autodiff import ShapeError, Tensor
from cordcpd.decoder import (Decoder, DecoderConfig, reconstruction_loss,
                             smoothness_from_pairs, smoothness_loss,
                             total_loss)
from cordcpd.encoder import matrices_to_pairs, ordered_pairs
from cordcpd.params import ParamSet
from cordcpd.rng import Rng


def rnd(*shape, seed=0, scale=1.0):
    return np.random.default_rng(seed).normal(scale=scale, size=shape)


def make_decoder(out_kind="rnn", n_vars=3, n_feats=2, hidden=4, seed=0):
    ps = ParamSet()
    cfg = DecoderConfig(out_kind=out_kind, hidden_dim=hidden)
    return Decoder(ps, cfg, n_vars, n_feats, Rng(seed)), ps


# ---------------------------------------------------------------------------
# single-step semantics

def test_zero_edges_kill_all_messages():
    dec, _ = make_decoder()
    x_t = Tensor(rnd(2, 3, 2, seed=1))
    a_zero = Tensor(np.zeros((2, 6)))
    a_rand = Tensor(np.abs(rnd(2, 6, seed=2)))
    h = dec.initial_hidden((2,))
    _, pred_zero, _ = dec.decode_step(x_t, a_zero, h)
    _, pred_rand, _ = dec.decode_step(x_t, a_rand, h)
    assert not np.allclose(pred_zero.data, pred_rand.data)
    # with zero edges, each node's prediction depends only on its own state
    x_other = Tensor(np.concatenate([x_t.data[:, :1], rnd(2, 2, 2, seed=3)], axis=1))
    _, pred_other, _ = dec.decode_step(x_other, a_zero, h)
    assert np.allclose(pred_zero.data[:, 0], pred_other.data[:, 0], atol=1e-14)


@pytest.mark.parametrize("out_kind", ["rnn", "mlp"])
def test_zero_output_head_predicts_identity(out_kind):
    dec, _ = make_decoder(out_kind=out_kind)
    head = dec.out_head if out_kind == "rnn" else dec.out_mlp.lin2
    head.w.data[:] = 0.0
    head.b.data[:] = 0.0
    x_t = Tensor(rnd(2, 3, 2, seed=4))
    a_t = Tensor(np.abs(rnd(2, 6, seed=5)))
    delta, pred, _ = dec.decode_step(x_t, a_t, dec.initial_hidden((2,)))
    assert np.array_equal(delta.data, np.zeros_like(delta.data))
    assert np.array_equal(pred.data, x_t.data)


def test_decode_step_rejects_bad_shapes():
    dec, _ = make_decoder()
    with pytest.raises(ShapeError):
        dec.decode_step(Tensor(rnd(2, 4, 2, seed=6)), Tensor(np.zeros((2, 6))),
                        dec.initial_hidden((2,)))
    with pytest.raises(ShapeError):
        dec.decode_step(Tensor(rnd(2, 3, 2, seed=7)), Tensor(np.zeros((2, 5))),
                        dec.initial_hidden((2,)))


# ---------------------------------------------------------------------------
# teacher forcing

@pytest.mark.parametrize("out_kind", ["rnn", "mlp"])
def test_teacher_forced_equals_chained_decode_steps(out_kind):
    dec, _ = make_decoder(out_kind=out_kind, seed=8)
    x = Tensor(rnd(2, 6, 3, 2, seed=9))
    a = Tensor(np.abs(rnd(2, 6, 6, seed=10)))
    preds, _ = dec.teacher_forced(x, a)
    assert preds.shape == (2, 5, 3, 2)
    hidden = dec.initial_hidden((2,))
    for t in range(5):
        _, want, hidden = dec.decode_step(x[:, t], a[:, t], hidden)
        assert np.allclose(preds.data[:, t], want.data, atol=1e-12)


def test_teacher_forced_uses_observations_not_predictions():
    dec, _ = make_decoder(seed=11)
    x1 = rnd(1, 5, 3, 2, seed=12)
    x2 = x1.copy()
    x2[0, 2] += 1.0                       # perturb observed step 3
    a = Tensor(np.abs(rnd(1, 5, 6, seed=13)))
    p1, _ = dec.teacher_forced(Tensor(x1), a)
    p2, _ = dec.teacher_forced(Tensor(x2), a)
    # predictions strictly before the perturbed step are untouched
    assert np.allclose(p1.data[:, :1], p2.data[:, :1], atol=1e-14)
    assert not np.allclose(p1.data[:, 2], p2.data[:, 2])


def test_teacher_forced_hidden_states_precede_each_transition():
    dec, _ = make_decoder(seed=14)
    x = Tensor(rnd(1, 5, 3, 2, seed=15))
    a = Tensor(np.abs(rnd(1, 5, 6, seed=16)))
    _, hiddens = dec.teacher_forced(x, a, return_hidden=True)
    assert hiddens.shape == (1, 4, 3, 4)
    assert np.array_equal(hiddens.data[:, 0], np.zeros((1, 3, 4)))
    hidden = dec.initial_hidden((1,))
    for t in range(3):
        _, _, hidden = dec.decode_step(x[:, t], a[:, t], hidden)
        assert np.allclose(hiddens.data[:, t + 1], hidden.data, atol=1e-12)


def test_teacher_forced_needs_two_steps():
    dec, _ = make_decoder()
    with pytest.raises(ShapeError):
        dec.teacher_forced(Tensor(rnd(1, 1, 3, 2, seed=17)),
                           Tensor(np.zeros((1, 1, 6))))


def test_mlp_head_returns_no_hidden_states():
    dec, _ = make_decoder(out_kind="mlp", seed=18)
    x = Tensor(rnd(1, 4, 3, 2, seed=19))
    a = Tensor(np.abs(rnd(1, 4, 6, seed=20)))
    preds, hiddens = dec.teacher_forced(x, a, return_hidden=True)
    assert preds.shape == (1, 3, 3, 2)
    assert hiddens is None


# ---------------------------------------------------------------------------
# rollouts

def test_free_rollout_k1_equals_teacher_forced_step():
    dec, _ = make_decoder(seed=21)
    x = rnd(5, 3, 2, seed=22)
    a = Tensor(np.abs(rnd(5, 6, seed=23)))
    preds, _ = dec.teacher_forced(Tensor(x[None]), a[None])
    window = dec.free_rollout(Tensor(x[:3]), a, k=1)
    assert window.shape == (1, 3, 2)
    assert np.allclose(window.data[0], preds.data[0, 2], atol=1e-12)


def test_free_rollout_feeds_predictions_back():
    dec, _ = make_decoder(seed=24)
    x = rnd(6, 3, 2, seed=25)
    a = Tensor(np.abs(rnd(6, 6, seed=26)))
    window = dec.free_rollout(Tensor(x[:2]), a, k=3)
    assert window.shape == (3, 3, 2)
    # recompute manually
    hidden = dec.initial_hidden((1,))
    _, _, hidden = dec.decode_step(Tensor(x[None, 0]), a[None, 0], hidden)
    cur = Tensor(x[None, 1])
    for j in range(3):
        _, cur, hidden = dec.decode_step(cur, a[None, 1 + j], hidden)
        assert np.allclose(window.data[j], cur.data[0], atol=1e-12)


def test_free_rollout_truncates_at_series_end():
    dec, _ = make_decoder(seed=27)
    x = rnd(4, 3, 2, seed=28)
    a = Tensor(np.abs(rnd(4, 6, seed=29)))
    window = dec.free_rollout(Tensor(x[:3]), a, k=10, total_steps=4)
    assert window.shape == (1, 3, 2)
    with pytest.raises(ValueError):
        dec.free_rollout(Tensor(x), a, k=2, total_steps=4)
    with pytest.raises(ValueError):
        dec.free_rollout(Tensor(x[:2]), a, k=0)


def test_rollout_all_starts_matches_individual_rollouts():
    dec, _ = make_decoder(seed=30)
    t_steps, k = 6, 3
    x = rnd(2, t_steps, 3, 2, seed=31)
    a = np.abs(rnd(2, t_steps, 6, seed=32))
    pred, valid = dec.rollout_all_starts(Tensor(x), Tensor(a), k)
    assert pred.shape == (2, t_steps - 1, k, 3, 2)
    assert valid.shape == (t_steps - 1, k)
    for b in range(2):
        for s in range(t_steps - 1):
            horizon = min(k, t_steps - (s + 1))
            window = dec.free_rollout(Tensor(x[b, :s + 1]), Tensor(a[b]),
                                      k, total_steps=t_steps)
            assert np.allclose(pred[b, s, :horizon], window.data, atol=1e-10)
            assert valid[s, :horizon].all() and not valid[s, horizon:].any()


# ---------------------------------------------------------------------------
# losses

def test_reconstruction_loss_matches_brute_force():
    x = rnd(2, 4, 3, 2, seed=33)
    y = rnd(2, 4, 3, 2, seed=34)
    got = float(reconstruction_loss(Tensor(x), Tensor(y), 0.5).data)
    want = 0.0
    for idx in np.ndindex(*x.shape):
        want += (y[idx] - x[idx]) ** 2 / (2 * 0.5)
    assert got == pytest.approx(want, rel=1e-12)
    assert float(reconstruction_loss(Tensor(x), Tensor(x), 0.5).data) == 0.0
    # a single scalar error e with sigma^2 = 0.5 contributes e^2
    e = 0.3
    one = np.zeros((1, 1, 1, 1))
    two = one + e
    assert float(reconstruction_loss(Tensor(one), Tensor(two), 0.5).data
                 ) == pytest.approx(e * e)


def test_smoothness_loss_single_flip_value():
    t_steps, n = 100, 4
    mats = np.zeros((t_steps, n, n))
    mats[50:, 0, 1] = 1.0
    mats[50:, 1, 0] = 1.0           # symmetric counterpart
    got = float(smoothness_loss(mats).data)
    assert got == pytest.approx(2.0 / (t_steps - 1), rel=1e-12)
    assert float(smoothness_loss(np.ones((5, 3, 3))).data) == 0.0


def test_smoothness_loss_ignores_the_diagonal():
    mats = np.zeros((3, 2, 2))
    mats[1, 0, 0] = 7.0
    mats[2, 1, 1] = -3.0
    assert float(smoothness_loss(mats).data) == 0.0


def test_smoothness_from_pairs_equals_matrix_form():
    b, t_steps, n = 3, 6, 4
    mats = np.abs(rnd(b, t_steps, n, n, seed=35))
    idx = np.arange(n)
    mats[..., idx, idx] = 0.0
    pairs = matrices_to_pairs(mats)
    got = float(smoothness_from_pairs(Tensor(pairs)).data)
    want = np.mean([float(smoothness_loss(mats[i]).data) for i in range(b)])
    assert got == pytest.approx(want, rel=1e-12)


def test_total_loss_combines_parts():
    x = rnd(2, 5, 3, 2, seed=36)
    preds = Tensor(rnd(2, 4, 3, 2, seed=37))
    pairs = Tensor(np.abs(rnd(2, 5, 6, seed=38)))
    total, recon, smooth = total_loss(Tensor(x), preds, pairs, 0.1, 2.0)
    assert float(total.data) == pytest.approx(
        float(recon.data) + 2.0 * float(smooth.data), rel=1e-12)
    total0, recon0, _ = total_loss(Tensor(x), preds, pairs, 0.1, 0.0)
    assert float(total0.data) == pytest.approx(float(recon0.data), rel=1e-12)
    assert float(recon0.data) == pytest.approx(
        float(reconstruction_loss(Tensor(x[:, 1:]), preds, 0.1).data) / 2)


def test_config_validation():
    with pytest.raises(ValueError):
        DecoderConfig(out_kind="cnn")
    with pytest.raises(ValueError):
        DecoderConfig(sigma_sq=0.0)
    with pytest.raises(ValueError):
        DecoderConfig(lambda_smooth=-1.0)
