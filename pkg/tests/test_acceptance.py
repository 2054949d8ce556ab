"""End-to-end acceptance checks, one test per criterion.

Every test prints a ``PASS``/``FAIL`` line (shown live with ``-s`` and
repeated in the terminal summary). The training-heavy criteria share one
session fixture that runs the default sweep (three seeds, baseline plus
seven blur factors) so the 30-minute budget covers all of them together.
"""

import contextlib
import math
import random
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from maskpriv import experiments as ex
from maskpriv.classifier import (
    PARAM_ORDER,
    TrainConfig,
    evaluate,
    init_params,
    loss_and_grads,
    train,
)
from maskpriv.imaging import (
    FaceRegion,
    Image,
    blur_region,
    hard_case_holdout,
    make_kernel,
)
from maskpriv.pipeline import (
    AnonymizedFrame,
    DeploymentMode,
    EdgeReport,
    build_frames,
    classify_frame,
    edge_process,
    make_population,
    round_robin_plan,
)
from maskpriv.protocol import audit, audit_messages, decode_stream, encode_stream


@contextlib.contextmanager
def criterion(n, title, budget=None):
    """Record PASS/FAIL for criterion ``n``; a runtime over ``budget`` seconds fails it."""
    info = {}
    start = time.perf_counter()
    try:
        yield info
        elapsed = info.get("elapsed", time.perf_counter() - start)
        if budget is not None:
            assert elapsed < budget, f"took {elapsed:.1f}s, budget {budget}s"
    except BaseException as exc:
        line = f"FAIL  [{n:2d}] {title}: {exc}".splitlines()[0]
        raise
    else:
        line = f"PASS  [{n:2d}] {title} ({info.get('detail', '')}, {elapsed:.2f}s)"
    finally:
        ACCEPTANCE_LINES[n] = line
        print(line)


# --- shared training run ------------------------------------------------------------


@pytest.fixture(scope="session")
def sweep():
    """Baseline and every blur factor on the default grid, three seeds each, with timings."""
    data = ex.DataConfig()
    out = {"acc": {}, "time": {}, "models": {}}
    start = time.perf_counter()
    for seed in ex.DEFAULT_SEEDS:
        samples = data.samples(seed)
        for blur in (None,) + ex.DEFAULT_F_VALUES:
            t0 = time.perf_counter()
            res = train(samples, TrainConfig(seed=seed), blur=blur)
            out["time"][blur, seed] = time.perf_counter() - t0
            out["acc"][blur, seed] = res.metrics.accuracy
            if seed == ex.DEFAULT_SEEDS[0] and blur in (None, 5.0):
                out["models"][blur] = res.model
    out["total"] = time.perf_counter() - start
    return out


# --- 1 ---------------------------------------------------------------------------------


def test_01_kernel_correctness():
    rng = random.Random(1)
    with criterion(1, "Gaussian kernel sums to 1, is symmetric, matches formula", budget=1.0) as info:
        for _ in range(200):
            extent, f = rng.randint(1, 400), rng.uniform(1.0, 64.0)
            k = make_kernel(extent, f)
            w = k.weights
            assert abs(w.sum() - 1.0) <= 1e-9
            assert np.array_equal(w, w[::-1])
            raw = [math.exp(-((i - k.radius) ** 2) / (2 * k.sigma**2)) for i in range(k.size)]
            total = math.fsum(raw)
            assert max(abs(a - b / total) for a, b in zip(w, raw)) <= 1e-9
            expected = max(1, math.floor(extent / f + 0.5))
            expected += expected % 2 == 0
            assert k.size == expected
            assert k.sigma == max(expected / 6, 0.3)
        info["detail"] = "200 pairs"


# --- 2 ---------------------------------------------------------------------------------


def naive_blur(px, region, kernel):
    """Direct 2-D convolution with the outer-product kernel over an edge-padded image."""
    r = kernel.radius
    k2 = np.outer(kernel.weights, kernel.weights)
    pad = np.pad(px.astype(np.float64), ((r, r), (r, r), (0, 0)), mode="edge")
    out = px.copy()
    for y in range(region.y, region.y + region.h):
        for x in range(region.x, region.x + region.w):
            win = pad[y : y + 2 * r + 1, x : x + 2 * r + 1]
            val = np.einsum("ij,ijc->c", k2, win)
            out[y, x] = np.clip(np.floor(np.abs(val) + 0.5) * np.sign(val), 0, 255)
    return out


def test_02_blur_matches_naive_oracle():
    rng = np.random.default_rng(2)
    with criterion(2, "separable blur equals naive 2-D convolution within 1 level", budget=10.0) as info:
        worst = 0
        for _ in range(50):
            px = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
            w, h = (int(v) for v in rng.integers(4, 33, size=2))
            x, y = int(rng.integers(0, 64 - w + 1)), int(rng.integers(0, 64 - h + 1))
            region = FaceRegion(x, y, w, h)
            f = float(rng.uniform(1, 8))
            got = blur_region(Image(px), region, f).pixels
            want = naive_blur(px, region, make_kernel(min(w, h), f))
            worst = max(worst, int(np.abs(got.astype(int) - want.astype(int)).max()))
            outside = np.ones((64, 64), dtype=bool)
            outside[y : y + h, x : x + w] = False
            assert np.array_equal(got[outside], px[outside])
        assert worst <= 1, f"max deviation {worst}"
        px = rng.integers(0, 256, size=(20, 20, 3), dtype=np.uint8)
        assert np.array_equal(blur_region(Image(px), FaceRegion(0, 0, 20, 20), 100.0).pixels, px)
        info["detail"] = f"50 regions, max deviation {worst}"


# --- 3 / 4 / 5 -------------------------------------------------------------------------


@pytest.mark.slow
def test_03_baseline_accuracy(sweep):
    with criterion(3, "baseline CNN held-out accuracy >= 0.97", budget=300.0) as info:
        accs = [sweep["acc"][None, s] for s in ex.DEFAULT_SEEDS]
        info["elapsed"] = max(sweep["time"][None, s] for s in ex.DEFAULT_SEEDS)
        assert min(accs) >= 0.97, f"accuracies {accs}"
        info["detail"] = "per-seed " + ", ".join(f"{a:.3f}" for a in accs)


@pytest.mark.slow
def test_04_price_of_privacy_at_f5(sweep):
    with criterion(4, "centralized f=5 within 5 points of baseline", budget=300.0) as info:
        gaps = [sweep["acc"][None, s] - sweep["acc"][5.0, s] for s in ex.DEFAULT_SEEDS]
        info["elapsed"] = max(sweep["time"][5.0, s] for s in ex.DEFAULT_SEEDS)
        assert max(gaps) <= 0.05, f"gaps {gaps}"
        info["detail"] = "gaps " + ", ".join(f"{100 * g:+.1f}pt" for g in gaps)


@pytest.mark.slow
def test_05_tradeoff_monotonicity(sweep):
    with criterion(5, "accuracy non-increasing as f decreases; f=1 loss <= 15 points", budget=1800.0) as info:
        info["elapsed"] = sweep["total"]
        means = {f: float(np.mean([sweep["acc"][f, s] for s in ex.DEFAULT_SEEDS])) for f in ex.DEFAULT_F_VALUES}
        base = float(np.mean([sweep["acc"][None, s] for s in ex.DEFAULT_SEEDS]))
        inversions = ex.monotonicity_inversions(means)
        assert len(inversions) <= 1 and all(d <= 0.02 for _, _, d in inversions), f"inversions {inversions}"
        loss = base - means[1.0]
        assert loss <= 0.15, f"f=1 loss {loss:.3f}"
        info["detail"] = (
            " ".join(f"f{f:g}={means[f]:.3f}" for f in ex.DEFAULT_F_VALUES)
            + f"; baseline {base:.3f}; f=1 loss {100 * loss:.1f}pt"
        )


# --- 6 ---------------------------------------------------------------------------------


@pytest.mark.slow
def test_06_decentralized_equivalence(sweep):
    model = sweep["models"][None]
    with criterion(6, "decentralized counts equal baseline frame for frame") as info:
        pop = make_population(30, 14, seed=6)
        frames = build_frames(pop, 5, round_robin_plan(pop, 5), seed=6)
        frames += build_frames(pop, 5, {p.person_id: {0, 1, 2, 3, 4} for p in pop}, seed=7, timestamp=1)
        mismatches = 0
        for fr in frames:
            dec = edge_process(fr, DeploymentMode.decentralized(), model)
            raw = edge_process(fr, DeploymentMode.baseline())
            mismatches += classify_frame(raw, model) != dec
        assert mismatches == 0
        info["detail"] = f"{len(frames)} frames"


# --- 7 ---------------------------------------------------------------------------------


@pytest.mark.slow
def test_07_hard_case_robustness(sweep):
    model = sweep["models"][5.0]
    with criterion(7, "hard-case holdout accuracy >= 0.85 at f=5") as info:
        m = evaluate(model, hard_case_holdout(50, seed=99), blur=5.0)
        assert m.total == 50
        assert m.accuracy >= 0.85, f"accuracy {m.accuracy:.3f}"
        info["detail"] = f"accuracy {m.accuracy:.3f}"


# --- 8 ---------------------------------------------------------------------------------


def test_08_overlap_bias():
    with criterion(8, "overlap bias naive 0.6667 vs true 0.600, dedup restores", budget=5.0) as info:
        res = ex.run_overlap(10, 6, 3, "masked", 3, DeploymentMode.centralized(5.0))
        assert (res.naive.persons_masked, res.naive.persons_total) == (8, 12)
        assert round(res.naive.ratio_masked, 4) == 0.6667
        assert res.true_ratio == 0.6
        assert res.dedup.ratio_masked == 0.6
        info["detail"] = f"naive {res.naive.ratio_masked:.4f}, dedup {res.dedup.ratio_masked:.4f}"


# --- 9 ---------------------------------------------------------------------------------


def test_09_protocol_and_audit():
    rng = np.random.default_rng(9)
    with criterion(9, "protocol round trip and audit verdicts", budget=10.0) as info:
        msgs = []
        for i in range(1000):
            if rng.random() < 0.7:
                total = int(rng.integers(0, 40))
                msgs.append(EdgeReport(f"cam{i % 4}", i, total, int(rng.integers(0, total + 1))))
            else:
                w, h = (int(v) for v in rng.integers(1, 16, size=2))
                img = Image(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))
                msgs.append(AnonymizedFrame(f"cam{i % 4}", i, img, (), (), "0" * 16))
        data = encode_stream(msgs)
        back = decode_stream(data)
        assert back == msgs and encode_stream(back) == data

        reports = [m for m in msgs if isinstance(m, EdgeReport)]
        assert audit(encode_stream(reports), DeploymentMode.decentralized()).compliant

        pop = make_population(8, 4, seed=9)
        frames = build_frames(pop, 2, round_robin_plan(pop, 2), seed=9)
        injected = detected = 0
        for f in (1.0, 2.0):
            mode = DeploymentMode.centralized(f)
            for fr in frames:
                anon = edge_process(fr, mode)
                assert audit_messages([anon], mode).compliant
                for j, r in enumerate(anon.regions):
                    px = anon.image.pixels.copy()
                    px[r.y : r.y + r.h, r.x : r.x + r.w] = r.crop(fr.image)
                    bad = AnonymizedFrame(anon.camera_id, anon.timestamp, Image(px), anon.regions,
                                          anon.appearance_tags, anon.config_checksum)
                    injected += 1
                    verdict = audit(encode_stream([bad]), mode)
                    detected += any(f"region {j} " in reason for _, reason in verdict.violations)
        assert detected == injected
        info["detail"] = f"1000 messages, {detected}/{injected} injected faults flagged"


# --- 10 --------------------------------------------------------------------------------


def test_10_gradient_check():
    rng = np.random.default_rng(10)
    with criterion(10, "analytic gradients match central differences", budget=30.0) as info:
        params = {k: v.astype(np.float64) for k, v in init_params(rng).items()}
        for k in ("conv1_b", "conv2_b", "dense_b"):
            params[k] = rng.normal(0, 0.1, size=params[k].shape)
        x = rng.uniform(0, 1, size=(4, 3, 32, 32))
        y = np.array([1, 0, 0, 1])
        _, grads = loss_and_grads(params, x, y)
        worst = 0.0
        eps = 1e-6
        for name in PARAM_ORDER:
            p = params[name]
            idx = rng.choice(p.size, size=min(p.size, 60), replace=False)
            analytic, numeric = [], []
            for flat in idx:
                pos = np.unravel_index(flat, p.shape)
                old = p[pos]
                p[pos] = old + eps
                lp, _ = loss_and_grads(params, x, y)
                p[pos] = old - eps
                lm, _ = loss_and_grads(params, x, y)
                p[pos] = old
                analytic.append(grads[name][pos])
                numeric.append((lp - lm) / (2 * eps))
            a, n = np.array(analytic), np.array(numeric)
            err = np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
            worst = max(worst, err)
        assert worst <= 1e-3, f"relative error {worst:.2e}"
        info["detail"] = f"worst relative error {worst:.1e}"
