"""Full network: prediction head, loss, gradients, ablation variants."""

import math

import numpy as np
import pytest
import torch

from poinext.config import ModelConfig
from poinext.experiments import normalize_variant, variant_model_config
from poinext.model import compute_loss
from poinext.samples import build_train_samples, collate

from conftest import make_micro_model, make_split, micro_model_config

import poinext.context as context_mod


@pytest.fixture(scope="module")
def setup():
    split = make_split(seed=1)
    stats = context_mod.build_context(split)
    samples, _ = build_train_samples(split, val_frac=0.0)
    return split, stats, samples


def test_probabilities_sum_to_one(setup):
    split, stats, samples = setup
    model = make_micro_model(split, stats)
    out = model(collate(samples[:8]))
    sums = out.probs.sum(dim=1)
    assert out.probs.shape == (8, split.vocab.n_pois)
    assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)
    assert torch.all(out.probs >= 0)


def test_prediction_is_pure(setup):
    split, stats, samples = setup
    model = make_micro_model(split, stats)
    a = model.predict_scores(samples[0])
    b = model.predict_scores(samples[0])
    assert np.array_equal(a, b)


def test_batching_does_not_change_per_sample_scores(setup):
    # Extra padding introduced by longer batch mates must not leak in.
    split, stats, samples = setup
    model = make_micro_model(split, stats)
    ordered = sorted(samples, key=lambda s: (len(s.cur[0]), len(s.hist)))
    short, long_ = ordered[0], ordered[-1]
    alone = model.predict_scores(short)
    with torch.no_grad():
        together = model(collate([short, long_])).probs[0].numpy()
    assert np.allclose(alone, together, atol=1e-12)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

class _Out:
    def __init__(self, probs, aux_pred, skip_cost=0.0):
        self.probs = probs
        self.aux_pred = aux_pred
        self.skip_cost = torch.tensor(skip_cost, dtype=probs.dtype)


class _Batch:
    def __init__(self, target):
        self.target = target


def test_loss_zero_for_perfect_prediction():
    probs = torch.tensor([[0.0, 1.0, 0.0]], dtype=torch.float64)
    out = _Out(probs, torch.zeros(1, 4, dtype=torch.float64))
    loss = compute_loss(out, _Batch(torch.tensor([1])), lambda_aux=0.0)
    assert float(loss) == 0.0


def test_loss_uniform_is_log_vocab():
    L = 64
    probs = torch.full((1, L), 1.0 / L, dtype=torch.float64)
    out = _Out(probs, torch.zeros(1, 4, dtype=torch.float64))
    loss = compute_loss(out, _Batch(torch.tensor([3])), lambda_aux=0.0)
    assert float(loss) == pytest.approx(math.log(L), abs=1e-12)


def test_loss_auxiliary_term_vanishes_when_matched():
    probs = torch.tensor([[0.0, 1.0]], dtype=torch.float64)
    v = torch.randn(2, 4, dtype=torch.float64)
    out = _Out(probs, v[1].unsqueeze(0).clone())
    loss = compute_loss(out, _Batch(torch.tensor([1])), lambda_aux=1.0, poi_table=v)
    assert float(loss) == 0.0


def test_loss_clamps_underflow():
    probs = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    out = _Out(probs, torch.zeros(1, 4, dtype=torch.float64))
    loss = compute_loss(out, _Batch(torch.tensor([1])), lambda_aux=0.0)
    assert torch.isfinite(loss)
    assert float(loss) == pytest.approx(-math.log(1e-12))


# ---------------------------------------------------------------------------
# Gradient checks (micro configuration, straight-through mode)
# ---------------------------------------------------------------------------

def finite_difference_check(model, loss_fn, params, rng, entries=4, h=1e-6, tol=1e-3):
    loss = loss_fn()
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=False)
    for (name, p), g in zip(params.items(), grads):
        flat = p.detach().reshape(-1)
        g_flat = g.reshape(-1)
        for _ in range(min(entries, flat.numel())):
            i = int(rng.integers(0, flat.numel()))
            with torch.no_grad():
                orig = flat[i].item()
                flat[i] = orig + h
                up = float(loss_fn())
                flat[i] = orig - h
                down = float(loss_fn())
                flat[i] = orig
            fd = (up - down) / (2 * h)
            an = g_flat[i].item()
            denom = max(abs(fd), abs(an), 1e-8)
            assert abs(fd - an) / denom < tol, f"{name}[{i}]: fd={fd}, analytic={an}"


def test_end_to_end_gradients_match_finite_differences(setup):
    split, stats, samples = setup
    cfg = micro_model_config(epsilon_mode="straight-through")
    model = make_micro_model(split, stats, cfg=cfg)
    batch = collate(samples[:4])

    def loss_fn():
        return compute_loss(
            model(batch), batch, lambda_aux=0.1, epsilon_coef=1.0,
            poi_table=model.tables.poi_table,
        )

    params = {
        "W_y": model.head.weight,
        "fusion(w1,w2)": model.short_term.fusion_raw,
        "W_q": model.long_term.attn.W_q.weight,
        "W_k": model.long_term.attn.W_k.weight,
        "W_v": model.long_term.attn.W_v.weight,
        "user_proj": model.long_term.user_proj.weight,
        "cost(W1..W3)": model.short_term.cost_weights,
        "aux_proj": model.aux_proj.weight,
    }
    finite_difference_check(model, loss_fn, params, np.random.default_rng(0))


def test_cost_weights_receive_gradient_only_in_straight_through(setup):
    split, stats, samples = setup
    batch = collate(samples[:4])

    st = make_micro_model(split, stats, cfg=micro_model_config(epsilon_mode="straight-through"))
    loss = compute_loss(st(batch), batch, lambda_aux=0.0, epsilon_coef=1.0,
                        poi_table=st.tables.poi_table)
    loss.backward()
    assert st.short_term.cost_weights.grad is not None
    assert torch.any(st.short_term.cost_weights.grad != 0)

    hard = make_micro_model(split, stats, cfg=micro_model_config(epsilon_mode="hard"))
    assert not hard.short_term.cost_weights.requires_grad


# ---------------------------------------------------------------------------
# Ablation variants
# ---------------------------------------------------------------------------

def test_variant_tags_normalize_from_paper_style():
    assert normalize_variant("w/o Short") == "wo_short"
    assert normalize_variant("w/o Short&Socail") == "wo_short_social"
    assert normalize_variant("w/o Long&STC-dilated") == "wo_long_stc_dilated"
    assert normalize_variant("full") == "full"


def test_unknown_variant_lists_valid_tags():
    with pytest.raises(ValueError, match="wo_short"):
        normalize_variant("w/o Everything")


def test_degenerate_variant_rejected():
    cfg = ModelConfig(use_long=False, use_short=False)
    with pytest.raises(ValueError, match="degenerate"):
        cfg.validate()


@pytest.mark.parametrize("tag", [
    "full", "wo_short", "wo_long", "wo_short_social", "wo_short_self_att",
    "wo_short_st_att", "wo_long_c_dilated_lstm", "wo_long_lstm", "wo_long_stc_dilated",
])
def test_every_variant_builds_and_runs(setup, tag):
    split, stats, samples = setup
    _, cfg = variant_model_config(micro_model_config(), tag)
    model = make_micro_model(split, stats, cfg=cfg)
    out = model(collate(samples[:3]))
    assert out.probs.shape == (3, split.vocab.n_pois)
    sums = out.probs.sum(dim=1)
    assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)


def test_variant_semantics_on_fusion(setup):
    split, stats, samples = setup
    batch = collate(samples[:3])

    _, cfg = variant_model_config(micro_model_config(), "wo_long_stc_dilated")
    model = make_micro_model(split, stats, cfg=cfg)
    out = model(batch)
    assert torch.equal(out.y_short, out.internals["h_last"])  # plain pass only

    _, cfg2 = variant_model_config(micro_model_config(), "wo_long")
    m2 = make_micro_model(split, stats, cfg=cfg2)
    assert m2.long_term is None
    assert m2.head.weight.shape[1] == cfg2.hidden + cfg2.dim_user

    _, cfg3 = variant_model_config(micro_model_config(), "wo_short")
    m3 = make_micro_model(split, stats, cfg=cfg3)
    assert m3.short_term is None
    assert m3.head.weight.shape[1] == cfg3.hidden + cfg3.dim_user


def test_overfit_single_sample_argmax_hits_target(setup):
    split, stats, samples = setup
    model = make_micro_model(split, stats, dtype=torch.float32)
    sample = samples[0]
    batch = collate([sample])
    opt = torch.optim.Adam([p for p in model.parameters() if p.requires_grad], lr=0.01)
    for _ in range(200):
        loss = compute_loss(model(batch), batch, lambda_aux=0.1,
                            poi_table=model.tables.poi_table)
        opt.zero_grad()
        loss.backward()
        opt.step()
    scores = model.predict_scores(sample)
    assert int(np.argmax(scores)) == sample.target


def test_per_user_metric_aggregation(setup):
    from poinext.metrics import evaluate

    split, stats, samples = setup
    model = make_micro_model(split, stats)
    flat = evaluate(model, samples, ks=(1, 5))
    per_user = evaluate(model, samples, ks=(1, 5), per_user=True)
    for rep in (flat, per_user):
        assert 0.0 <= rep.recall[1] <= rep.recall[5] <= 1.0
        assert 0.0 <= rep.ndcg[1] <= rep.ndcg[5] <= 1.0
    assert flat.n_samples == per_user.n_samples == len(samples)


def test_reduction_full_model_kappa_one_tied_cells(setup):
    # Acceptance: kappa_max=1 plus tied cells makes the short-term vector
    # equal the plain pass exactly.
    split, stats, samples = setup
    cfg = micro_model_config(kappa_max=1)
    model = make_micro_model(split, stats, cfg=cfg)
    with torch.no_grad():
        for dst, src in zip(model.short_term.dilated_cell.parameters(),
                            model.current_cell.parameters()):
            dst.copy_(src)
    out = model(collate(samples[:5]))
    assert torch.equal(out.y_short, out.internals["h_last"])
