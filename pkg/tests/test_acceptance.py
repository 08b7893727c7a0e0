"""Exit criteria for the package, each reported on its own line in the pytest summary.

Run alone with ``pytest tests/test_acceptance.py -v``. The MNIST-backed criteria use
full MNIST when ``HYPCLIP_MNIST_DIR`` (default ``data/mnist``) holds the IDX files and
the bundled 5000-digit sample otherwise.
"""

import math

import numpy as np
import pytest

from hypclip import embed as emb
from hypclip import geometry as geo
from hypclip.harness import attacks
from hypclip.harness import experiments as ex
from hypclip.harness.cli import main
from hypclip.harness.config import build_config
from hypclip.harness.ood import metric_suite
from hypclip.mlr import ClipConfig, clip_features, loss_and_grads, with_params
from hypclip.net import backward, input_gradient, new_state, taylor_step_check
from helpers import (
    SATURATION_NORM, central_difference, five_point_difference, random_head_problem, rel_error,
    threshold_sweep,
)
from test_cli import TINY
from test_mlr import _linearised_loss
from test_net import _linearised, _problem, _with_layer

N_CASES = 10_000
A, B, C = np.array([0.5, 0.55]), np.array([0.3, -0.6]), np.array([-0.1, 0.1])


def _ball(rng, n, dim, max_norm, c=1.0):
    v = rng.normal(size=(n, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * rng.uniform(0, max_norm, size=(n, 1)) / math.sqrt(c)


# -- 1 --------------------------------------------------------------------------------


@pytest.mark.criterion("1", "geometry conformance, 10^4 cases per law, < 10 s")
def test_geometry_conformance(stopwatch):
    c = 1.0
    rng = np.random.default_rng(2024)
    dim = 5
    u, v, w = (_ball(rng, N_CASES, dim, 0.9, c) for _ in range(3))
    zero = np.zeros_like(u)

    assert np.max(np.abs(geo.mobius_add(zero, v, c) - v)) <= 1e-12
    assert np.max(np.abs(geo.mobius_add(-u, u, c))) <= 1e-12
    assert np.max(np.abs(geo.mobius_add(u, geo.mobius_add(-u, v, c), c) - v)) <= 1e-10

    small = _ball(rng, N_CASES, dim, 0.7, c)
    r1, r2 = rng.uniform(-2, 2, size=(2, N_CASES))
    lhs = geo.mobius_scalar_mul(r1 + r2, small, c)
    rhs = geo.mobius_add(geo.mobius_scalar_mul(r1, small, c), geo.mobius_scalar_mul(r2, small, c), c)
    interior = np.linalg.norm(lhs, axis=1) < 0.999 / math.sqrt(c)
    assert interior.sum() > 0.9 * N_CASES
    assert np.max(np.abs(lhs - rhs)[interior]) <= 1e-9

    d_uv, d_vu = geo.distance(u, v, c), geo.distance(v, u, c)
    assert np.all(d_uv >= 0)
    assert np.max(np.abs(d_uv - d_vu)) <= 1e-12
    assert np.all(geo.distance(u, u, c) == 0.0)
    slack = d_uv + geo.distance(v, w, c) - geo.distance(u, w, c)
    assert slack.min() >= -1e-9

    assert np.max(np.abs(geo.exp0(geo.log0(u, c), c) - u)) <= 1e-8
    assert np.max(np.abs(geo.exp_at(u, geo.log_at(u, v, c), c) - v)) <= 1e-8
    t = geo.log_at(u, v, c)
    assert np.max(np.abs(geo.log_at(u, geo.exp_at(u, t, c), c) - t)) <= 1e-8 * (1 + np.max(np.abs(t)))
    assert stopwatch() < 10.0


# -- 2 --------------------------------------------------------------------------------


@pytest.mark.criterion("2", "published numerical examples")
def test_reference_numerics():
    assert abs(float(geo.distance(A, B)) - 3.1822) <= 5e-4
    assert abs(float(np.linalg.norm(A - B)) - 1.1673) <= 5e-4
    assert abs(geo.triangle_defect(A, B, C).degrees - 58.21) <= 0.05
    long = clip_features(np.array([[30.0, -40.0]]), 1.0)
    assert float(geo.origin_distance(geo.exp0(long))[0]) == pytest.approx(2.0, abs=1e-12)


# -- 3 --------------------------------------------------------------------------------


def _head_case(seed):
    head, feats, labels, cfg = random_head_problem(seed)
    out = loss_and_grads(head, feats, labels, cfg, embedding_grad="euclidean")
    phi = _linearised_loss(head, feats, labels, cfg)
    return max(
        rel_error(out.d_features, central_difference(lambda f: phi(head, f), feats)),
        rel_error(out.grads["p"], central_difference(lambda p: phi(with_params(head, p=p), feats), head.p)),
        rel_error(out.grads["a"], central_difference(lambda a: phi(with_params(head, a=a), feats), head.a)),
    )


def _encoder_case(seed):
    head = "euclidean" if seed % 4 == 3 else "hyperbolic"
    clip = [ClipConfig(), ClipConfig.vanilla(), ClipConfig("none")][seed % 3]
    state, X, y = _problem(seed, head, clip)
    grads = backward(state, X, y, embedding_grad="euclidean")
    phi = _linearised(state, X, y)
    clipped = clip_features(grads.features, clip.r) if clip.mode == "hard_clip" else grads.features
    if head == "hyperbolic" and np.max(np.linalg.norm(clipped, axis=1)) >= SATURATION_NORM:
        # embeddings on the projection sphere: a 1e-6 step is rounding-bound
        diff = lambda f, x: five_point_difference(f, x, 1e-4)  # noqa: E731
    else:
        diff = central_difference
    worst = 0.0
    for i, (dW, db) in enumerate(grads.encoder):
        layer = state.encoder.layers[i]
        fd_W = diff(lambda W: phi(_with_layer(state, i, W=W)), layer.W)
        fd_b = diff(lambda b: phi(_with_layer(state, i, b=b)), layer.b)
        worst = max(worst, rel_error(dW, fd_W), rel_error(db, fd_b))
    return worst


def _embedding_case(seed):
    rng = np.random.default_rng(seed)
    mode = emb.MODES[seed % 3]
    n = 8
    table = rng.normal(size=(n, 4))
    table *= rng.uniform(0, 0.8, size=(n, 1)) / np.linalg.norm(table, axis=1, keepdims=True)
    negs = rng.choice(np.arange(2, n), size=4)
    res = emb.nce_loss(table, 0, 1, negs, mode)
    fd = central_difference(lambda t: emb.nce_loss(t, 0, 1, negs, mode).loss, table)
    grad_t = np.zeros_like(table)
    np.add.at(grad_t, np.concatenate([[1], negs]), res.grad_targets)
    return max(rel_error(res.grad_u, fd[0]), rel_error(grad_t[1:], fd[1:]))


@pytest.mark.criterion("3", "analytic gradients vs central differences, >= 100 configurations, < 60 s")
def test_gradient_oracle(stopwatch):
    errors = {
        "head": [_head_case(s) for s in range(1000, 1050)],
        "encoder": [_encoder_case(s) for s in range(2000, 2030)],
        "embedding": [_embedding_case(s) for s in range(3000, 3030)],
    }
    assert sum(len(v) for v in errors.values()) >= 100
    for part, errs in errors.items():
        print(f"{part}: {len(errs)} configurations, worst relative error {max(errs):.2e}")
        assert max(errs) < 1e-5, part
    assert stopwatch() < 60.0


# -- 4 --------------------------------------------------------------------------------


@pytest.fixture(scope="session")
def diagnostic(tmp_path_factory):
    import time
    start = time.perf_counter()
    summary = ex.run_gradient_diagnostic(build_config("diagnose"), tmp_path_factory.mktemp("diag"))
    return summary, time.perf_counter() - start


@pytest.mark.criterion("4a", "vanishing gradients without clipping (r = 15), < 5 min")
def test_vanishing_gradient(diagnostic):
    summary, elapsed = diagnostic
    run = summary["runs"]["r15"]
    print({k: run[k] for k in ("final_mean_norm", "grad_ratio", "final_loss_slope", "final_loss_tstat")})
    assert run["final_mean_norm"] > 0.999
    assert run["grad_ratio"] < 1e-3
    # the net is frozen over the last window, so only a significant downward trend counts as decreasing
    assert run["final_loss_tstat"] >= -2.0
    assert elapsed < 300.0


@pytest.mark.criterion("4b", "clipped run keeps the metric factor >= 0.045 (r = 1)")
def test_clipped_metric_factor(diagnostic):
    run = diagnostic[0]["runs"]["r1"]
    print("min metric factor", run["min_metric_factor"], "bound at the clip radius", run["clip_factor_bound"])
    assert run["min_metric_factor"] >= 0.045


def test_diagnostic_clip_bound_and_start(diagnostic):
    runs = diagnostic[0]["runs"]
    assert runs["r1"]["max_mean_norm"] <= math.tanh(1.0) + 1e-9
    assert runs["r1"]["min_metric_factor"] >= runs["r1"]["clip_factor_bound"] - 1e-15
    for run in runs.values():
        assert run["initial_tracked_max_norm"] < 0.1


# -- 5 --------------------------------------------------------------------------------


@pytest.mark.criterion("5", "MNIST classification: clipped within 1 pt of Euclidean, >= 2 pts over vanilla")
def test_classification_gap(tmp_path, stopwatch):
    summary = ex.run_classification(build_config("classify"), tmp_path)
    acc = {m: v["test_accuracy"] for m, v in summary["models"].items()}
    print(summary["dataset"], summary["train_size"], acc)
    assert abs(acc["clipped"] - acc["euclidean"]) <= 0.01
    assert acc["clipped"] - acc["vanilla"] >= 0.02
    assert stopwatch() < 3 * 20 * 60


# -- 6 --------------------------------------------------------------------------------


@pytest.mark.criterion("6", "tree reconstruction mAP ordering and chain mAP = 1, < 2 min")
def test_embedding_reconstruction(tmp_path, stopwatch):
    summary = ex.run_embed(build_config("embed"), tmp_path)
    m = {mode: v["map"] for mode, v in summary["modes"].items()}
    chain = emb.chain(3)
    table = emb.train_embeddings(chain, "clipped", emb.EmbedConfig(dim=2, epochs=200)).table
    print(summary["nodes"], "nodes", m)
    assert emb.map_score(table, chain) == 1.0
    assert m["clipped"] >= m["euclidean"] + 0.10
    assert m["clipped"] >= m["hyperbolic"] - 0.02
    assert stopwatch() < 120.0


# -- 7 --------------------------------------------------------------------------------


@pytest.mark.criterion("7", "Taylor-step deviation ratio in [0.15, 0.4] over 20 trials")
def test_taylor_step():
    ratios = []
    for trial in range(20):
        state, X, y = _problem(5000 + trial, smooth=True)
        ratios.append(taylor_step_check(state, X, y, 0.005) / taylor_step_check(state, X, y, 0.01))
    print("ratios", np.round(ratios, 4))
    assert all(0.15 <= r <= 0.4 for r in ratios)


# -- 8 --------------------------------------------------------------------------------


@pytest.mark.criterion("8", "attack and OOD oracles exact; FGSM robustness clipped >= vanilla")
def test_attack_and_ood_plumbing(tmp_path):
    rng = np.random.default_rng(8)
    state = new_state([6, 8, 3], 3, seed=8)
    X, y = rng.uniform(0.1, 0.9, size=(16, 6)), rng.integers(0, 3, 16)

    _, g = input_gradient(state, X, y)
    np.testing.assert_array_equal(attacks.fgsm(state, X, y, 0.2), np.clip(X + 0.2 * np.sign(g), 0, 1))
    adv = X.copy()
    for _ in range(5):
        _, g = input_gradient(state, adv, y)
        adv = np.clip(np.clip(adv + 0.05 * np.sign(g), X - 0.1, X + 0.1), 0, 1)
    np.testing.assert_array_equal(attacks.pgd(state, X, y, 0.1, 5, 0.05), adv)

    ins, outs = [0.9, 0.8, 0.7, 0.3, 0.2], [0.85, 0.6, 0.5, 0.1, 0.05]
    np.testing.assert_allclose(metric_suite(ins, outs), threshold_sweep(ins, outs), rtol=0, atol=1e-15)

    summary = ex.run_attack(build_config("attack"), tmp_path)
    models = summary["models"]
    print(summary["dataset"], {m: {k: round(v, 4) for k, v in d.items()} for m, d in models.items()})
    assert models["clipped"]["fgsm_accuracy"] >= models["vanilla"]["fgsm_accuracy"]


# -- 9 --------------------------------------------------------------------------------


@pytest.mark.criterion("9", "identical config and seed give byte-identical outputs for every subcommand")
def test_determinism(tmp_path, capsys):
    def run(sub, tag):
        cfg = tmp_path / f"{sub}.cfg"
        cfg.write_text(TINY[sub])
        out = tmp_path / f"{sub}-{tag}"
        assert main([sub, "--config", str(cfg), "--seed", "77", "--out", str(out)]) == 0
        return {p.name: p.read_bytes() for p in sorted(out.iterdir())}

    for sub in TINY:
        assert run(sub, "a") == run(sub, "b"), sub
    capsys.readouterr()
    geo_args = ["geo", "defect", "--x=0.5,0.55", "--y=0.3,-0.6", "--z=-0.1,0.1"]
    outputs = []
    for _ in range(2):
        assert main(geo_args) == 0
        outputs.append(capsys.readouterr().out)
    assert outputs[0] == outputs[1]
