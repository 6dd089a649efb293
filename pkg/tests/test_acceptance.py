"""Acceptance criteria, one test per criterion.

Each test records a single PASS/FAIL line (see ``conftest.py``) with the
measured quantity, then asserts the stated bound.
"""

import dataclasses
import time

import numpy as np
import pytest

from pcae import diffcore as dc
from pcae.config import PRESETS, TRAIN_PRESETS, TrainConfig
from pcae.decoder import interpolate_regions, reconstruct_area, rnn_decode_region
from pcae.encoder import AttentionBlockConfig, encode, self_attention_block
from pcae.evaluation import (
    attention_summary,
    dense_pool,
    extract_features,
    random_ball,
    retrieval_map,
    train_linear_svm,
    upsample,
)
from pcae.geometry import build_pyramid, chamfer_distance, farthest_point_sample, knn_group
from pcae.model import forward, init_params, make_batch
from pcae.synthetic import make_corpus, make_shape
from pcae.training import local_loss, total_loss, train

from . import oracles
from .gradcheck import check_model_gradients

TOY = PRESETS["toy"]
DESK = PRESETS["desk"]
N_INSTANCES = 100


# ---------------------------------------------------------------- criterion 1


def _attention_case(rng):
    d1, d2, c = rng.integers(2, 7), rng.integers(1, 6), rng.integers(1, 4)
    x = rng.normal(size=(d1, d2))
    w = {k: rng.normal(size=(d2, c)) for k in ("W_f", "W_g", "W_h")}
    out, beta = self_attention_block(x, w, AttentionBlockConfig(int(c)), return_attention=True)
    ref, ref_beta = oracles.attention(x, w["W_f"], w["W_g"], w["W_h"])
    return max(oracles.rel_err(out.data, ref), oracles.rel_err(beta, ref_beta.T))


def _interpolate_case(rng):
    g = rng.normal(size=rng.integers(1, 9))
    p = rng.normal(size=(rng.integers(1, 7), 3)) * rng.uniform(1e-3, 2.0)
    return oracles.rel_err(interpolate_regions(g, p).data, oracles.interpolate(g, p))


def _rnn_case(rng):
    d, hid, steps = rng.integers(1, 5), rng.integers(1, 5), rng.integers(1, 5)
    p = {"dec.lstm.W_x": rng.normal(size=(d, 4 * hid)), "dec.lstm.W_h": rng.normal(size=(hid, 4 * hid)),
         "dec.lstm.b": rng.normal(size=4 * hid), "dec.W_theta": rng.normal(size=(hid, d))}
    x = rng.normal(size=d)
    got = rnn_decode_region(x, p, int(steps)).data
    ref = oracles.rnn_decode(x, p["dec.lstm.W_x"], p["dec.lstm.W_h"], p["dec.lstm.b"], p["dec.W_theta"], steps)
    return oracles.rel_err(got, ref)


def _area_case(rng):
    d, k = rng.integers(1, 6), rng.integers(1, 7)
    p = {"dec.area.0.W": rng.normal(size=(d, 3 * k)), "dec.area.0.b": rng.normal(size=3 * k)}
    a = rng.normal(size=d)
    return oracles.rel_err(reconstruct_area(a, 0, p, (int(k),)).data, oracles.area(a, p["dec.area.0.W"],
                                                                                  p["dec.area.0.b"], k))


def _chamfer_case(rng):
    a, b = rng.normal(size=(rng.integers(1, 9), 3)), rng.normal(size=(rng.integers(1, 9), 3))
    return oracles.rel_err(chamfer_distance(a, b), oracles.chamfer(a, b))


def _local_case(rng):
    m = rng.integers(1, 4)
    ks = np.sort(rng.choice(np.arange(1, 7), size=rng.integers(1, 4), replace=False))
    true = [rng.normal(size=(m, k, 3)) for k in ks]
    recon = [rng.normal(size=(m, k, 3)) for k in ks]
    ref = oracles.local_loss([list(t) for t in true], [list(r) for r in recon])
    return oracles.rel_err(float(local_loss(true, recon).data), ref)


_TOTAL_PARAMS = {}


def _total_case(rng):
    if "p" not in _TOTAL_PARAMS:
        _TOTAL_PARAMS["p"] = init_params(TOY, 0).frozen()
    cloud = make_shape(("sphere", "box", "plane")[rng.integers(3)], TOY.n_points, rng)
    gamma = float(rng.uniform(0, 2))
    batch = make_batch([cloud], TOY, int(rng.integers(1 << 30)))
    dec = forward(_TOTAL_PARAMS["p"], batch, TOY).decoder
    got = total_loss(batch, dec, gamma).total
    true = [[batch.areas(t)[0][m] for m in range(TOY.n_regions)] for t in range(TOY.n_scales)]
    recon = [[a.data[0][m] for m in range(TOY.n_regions)] for a in dec.reconstructed_areas]
    return oracles.rel_err(got, oracles.total_loss(true, recon, batch.points[0],
                                                   dec.reconstructed_cloud.data[0], gamma))


ORACLE_CASES = {
    "self_attention_block": _attention_case,
    "interpolate_regions": _interpolate_case,
    "rnn_decode_region": _rnn_case,
    "reconstruct_area": _area_case,
    "chamfer_distance": _chamfer_case,
    "local_loss": _local_case,
    "total_loss": _total_case,
}


def test_criterion_1_equation_oracles(acceptance):
    start = time.perf_counter()
    worst = {}
    for name, case in ORACLE_CASES.items():
        worst[name] = max(case(np.random.default_rng([1, seed])) for seed in range(N_INSTANCES))
    elapsed = time.perf_counter() - start
    top = max(worst, key=worst.get)
    ok = max(worst.values()) < 1e-10 and elapsed < 60
    acceptance(1, ok, f"{len(worst)} functions x {N_INSTANCES} instances, max rel err {worst[top]:.2e} "
                      f"({top}) < 1e-10, {elapsed:.1f}s < 60s")
    assert ok, worst


# ---------------------------------------------------------------- criterion 2


def test_criterion_2_gradient_check(acceptance):
    start = time.perf_counter()
    reports = []
    for seed in range(3):
        rng = np.random.default_rng([2, seed])
        clouds = [make_shape(k, TOY.n_points, rng) for k in ("sphere", "box")]
        reports.append(check_model_gradients(init_params(TOY, seed), clouds, TOY, seed=seed, h=1e-5))
    elapsed = time.perf_counter() - start
    max_rel = max(r.max_rel for r in reports)
    checked = sum(r.checked for r in reports)
    skipped = sum(r.skipped_kinks for r in reports)
    n_params = len(reports[0].per_param)
    ok = max_rel < 1e-4 and elapsed < 300 and all(len(r.per_param) == n_params for r in reports)
    acceptance(2, ok, f"{checked} probes over all {n_params} parameters, max rel err {max_rel:.2e} < 1e-4 "
                      f"({skipped} kink probes skipped), {elapsed:.1f}s < 300s")
    assert ok, [r.worst for r in reports]


# ---------------------------------------------------------------- criterion 3


def _invariants():
    rng = np.random.default_rng(3)
    results = {}

    cloud = make_shape("box", TOY.n_points, rng)
    pyr = build_pyramid(cloud, TOY.n_regions, TOY.scales)
    params = init_params(TOY, 3)
    out = encode(cloud, pyr, params, TOY, keep_attention=True)
    dev = 0.0
    for maps in out.attention_maps.values():
        for beta in maps:
            dev = max(dev, float(np.abs(np.asarray(beta).sum(axis=-2) - 1.0).max()))
    results["softmax columns sum to 1"] = dev <= 1e-12

    base = out.scale_features.data
    same = True
    for m in range(TOY.n_regions):
        for t in range(TOY.n_scales):
            groups = [g.copy() for g in pyr.groups]
            groups[t][m] = rng.permutation(groups[t][m])
            moved = encode(cloud, dataclasses.replace(pyr, groups=tuple(groups)), params, TOY).scale_features.data
            same &= bool(np.allclose(moved[m, t], base[m, t], rtol=1e-12, atol=1e-14))
    results["scale features permutation invariant"] = same

    ok = True
    for _ in range(50):
        a, b = rng.normal(size=(rng.integers(1, 20), 3)), rng.normal(size=(rng.integers(1, 20), 3))
        shift = rng.normal(size=3) * 5
        ok &= chamfer_distance(a, a) == 0.0
        ok &= chamfer_distance(a, b) == chamfer_distance(b, a)
        ok &= abs(chamfer_distance(a + shift, b + shift) - chamfer_distance(a, b)) < 1e-12
    results["chamfer identity/symmetry/translation"] = bool(ok)

    ok = True
    for seed in range(20):
        pts = np.random.default_rng(seed).normal(size=(30, 3))
        ok &= sorted(farthest_point_sample(pts, 30, seed).tolist()) == list(range(30))
    results["FPS m=N is a permutation"] = bool(ok)

    ok = True
    for seed in range(20):
        pts = np.random.default_rng(seed).normal(size=(40, 3))
        cents = farthest_point_sample(pts, 6, seed)
        groups = knn_group(pts, cents, (3, 7, 12, 40)).groups
        for small, big in zip(groups, groups[1:]):
            ok &= bool(np.array_equal(big[:, : small.shape[1]], small))
    results["kNN groups nest"] = bool(ok)

    clouds = [make_shape(k, TOY.n_points, np.random.default_rng(30)) for k in ("sphere", "box", "plane")]
    tc = TrainConfig(learning_rate=1e-3, epochs=3, batch_size=2, seed=9)
    a, b = train(clouds, TOY, tc), train(clouds, TOY, tc)
    same = [r.total for r in a.history] == [r.total for r in b.history]
    same &= all(a.params[n].tobytes() == b.params[n].tobytes() for n in a.params)
    results["same-seed training bitwise identical"] = same
    return results


def test_criterion_3_invariants(acceptance):
    results = _invariants()
    failed = [k for k, v in results.items() if not v]
    acceptance(3, not failed, f"{len(results) - len(failed)}/{len(results)} invariants hold"
                              + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert not failed


# ---------------------------------------------------------------- criterion 4


def test_criterion_4_overfit(acceptance):
    cfg = PRESETS["overfit"]
    tc = dataclasses.replace(TRAIN_PRESETS["overfit"], epochs=200, batch_size=1)
    cloud = make_shape("box", cfg.n_points, np.random.default_rng(4))
    start = time.perf_counter()
    hist = train([cloud], cfg, tc).history
    elapsed = time.perf_counter() - start
    ratio = hist[-1].total / hist[0].total
    ok = ratio < 0.10 and elapsed < 300
    acceptance(4, ok, f"single {cfg.n_points}-point cloud, 200 epochs, Adam lr {tc.learning_rate:g}: "
                      f"final/epoch-1 loss {ratio:.4f} < 0.10, {elapsed:.1f}s < 300s")
    assert ok


# ------------------------------------------------------ criteria 5, 6 and 8


@pytest.fixture(scope="session")
def desk_run():
    clouds, labels, splits = make_corpus(50, 20, DESK.n_points, seed=0)
    train_set = [(c, lab) for c, lab, s in zip(clouds, labels, splits) if s == "train"]
    test_set = [(c, lab) for c, lab, s in zip(clouds, labels, splits) if s == "test"]
    tc = TRAIN_PRESETS["desk"]
    start = time.perf_counter()
    res = train([c for c, _ in train_set], DESK, tc)
    return {"params": res.params, "train": train_set, "test": test_set,
            "history": res.history, "seconds": time.perf_counter() - start, "epochs": tc.epochs}


def test_criterion_5_desk_end_to_end(desk_run, acceptance):
    start = time.perf_counter()
    params = desk_run["params"]
    ftr = extract_features([c for c, _ in desk_run["train"]], params, DESK, [lab for _, lab in desk_run["train"]])
    fte = extract_features([c for c, _ in desk_run["test"]], params, DESK, [lab for _, lab in desk_run["test"]])
    acc = train_linear_svm(ftr).accuracy(fte.features, fte.labels)
    mean_ap = retrieval_map(fte).mAP
    elapsed = desk_run["seconds"] + time.perf_counter() - start
    ok = acc >= 0.90 and mean_ap >= 0.80 and elapsed < 1800
    acceptance(5, ok, f"150/60 clouds, {desk_run['epochs']} epochs: test accuracy {acc:.4f} >= 0.90, "
                      f"mAP {mean_ap:.4f} >= 0.80, {elapsed:.0f}s < 1800s")
    assert ok


def test_criterion_6_upsampling(desk_run, acceptance):
    params, test = desk_run["params"], desk_run["test"]
    target = 4 * DESK.n_points
    wins, counts_ok = 0, True
    pool_size = len(dense_pool(test[0][0], params, DESK))
    for seed in range(10):
        cloud = test[(seed * 7) % len(test)][0]
        up = upsample(cloud, target, params, DESK, seed=seed)
        counts_ok &= len(up) == target
        wins += chamfer_distance(up, cloud) < chamfer_distance(random_ball(target, seed), cloud)
    ok = counts_ok and pool_size == DESK.dense_size and wins >= 9
    acceptance(6, ok, f"{target} points returned: {counts_ok}, pool {pool_size} == M*sum(K) {DESK.dense_size}, "
                      f"beats random ball in {wins}/10 >= 9")
    assert ok


def test_criterion_8_attention_summaries(desk_run, acceptance):
    params = desk_run["params"].frozen()
    worst, checked, ok = 0.0, 0, True
    for cloud, _ in desk_run["test"][:6]:
        maps = forward(params, make_batch([cloud], DESK), DESK, keep_attention=True).encoder.attention_maps
        for level_maps in maps.values():
            for beta in level_maps:
                flat = np.asarray(beta).reshape((-1,) + np.asarray(beta).shape[-2:])
                for square in flat:
                    vec = attention_summary(square)
                    ok &= vec.shape == (square.shape[0],) and bool((vec >= 0).all())
                    worst = max(worst, abs(vec.sum() - square.shape[0]))
                    checked += 1
    ok = ok and worst <= 1e-9
    acceptance(8, ok, f"{checked} maps: lengths D1, nonnegative, |sum - D1| max {worst:.1e} <= 1e-9")
    assert ok


# ---------------------------------------------------------------- criterion 7


def test_criterion_7_ablations(acceptance):
    clouds, _, _ = make_corpus(4, 0, TOY.n_points, seed=7)
    short = TrainConfig(learning_rate=3e-3, epochs=10, batch_size=8)
    finite = {}
    for code in ("PL", "AL", "RL", "NSA", "ASA"):
        finite[code] = all(np.isfinite(r.total) for r in train(clouds, TOY.with_attention(code), short).history)
    for code in ("Local", "Global", "Local+Global"):
        finite[code] = all(np.isfinite(r.total) for r in train(clouds, TOY, short.with_losses(code)).history)
    wins = 0
    for seed in range(10):
        corpus, _, _ = make_corpus(4, 0, TOY.n_points, seed=seed)
        tc = TrainConfig(learning_rate=3e-3, epochs=100, batch_size=8, lr_decay_every_epochs=1000, seed=seed)
        final = {c: train(corpus, TOY.with_attention(c), tc).history[-1].total for c in ("NSA", "ASA")}
        wins += final["ASA"] <= final["NSA"]
    ok = all(finite.values()) and wins >= 7
    acceptance(7, ok, f"{sum(finite.values())}/8 configurations train without abort; "
                      f"ASA <= NSA final loss in {wins}/10 seeds >= 7")
    assert ok


def test_acceptance_dc_is_float64():
    # all acceptance numbers above are computed at f64
    assert dc.constant(np.ones(2)).data.dtype == np.float64
