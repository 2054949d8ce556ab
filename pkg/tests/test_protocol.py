import json
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maskpriv.errors import AuditError, ProtocolError
from maskpriv.imaging import FaceRegion, Image, SynthSpec
from maskpriv.pipeline import (
    AnonymizedFrame,
    DeploymentMode,
    EdgeReport,
    build_frames,
    compose_frame,
    edge_process,
    make_population,
)
from maskpriv.protocol import (
    REPORT_FIELDS,
    STREAM_LEVEL,
    audit,
    audit_messages,
    decode,
    decode_stream,
    detail_threshold,
    encode,
    encode_stream,
)


def anon_frame(f=2.0, n=3, seed=0, ts=0):
    specs = [SynthSpec(masked=i % 2 == 0, person_id=f"p{i}", clothing_color=(20, 60 + 40 * i, 200),
                       rng_seed=seed * 10 + i) for i in range(n)]
    fr = compose_frame("cam0", ts, specs)
    return fr, edge_process(fr, DeploymentMode.centralized(f))


# --- encoding ---------------------------------------------------------------------


def test_report_bytes_are_exact():
    assert encode(EdgeReport("c1", 7, 4, 3)) == (
        b'{"camera_id":"c1","masked":3,"total":4,"ts":7,"type":"report","v":1}\n'
    )


def test_report_schema_has_no_pixel_fields():
    head = json.loads(encode(EdgeReport("cam", 1, 9, 2)))
    assert set(head) == REPORT_FIELDS
    numeric = [k for k, v in head.items() if isinstance(v, int) and k != "v"]
    assert len(numeric) <= 4
    assert not {"pixels", "image", "width", "height", "regions"} & set(head)


reports = st.builds(
    lambda cam, ts, a, b: EdgeReport(cam, ts, max(a, b), min(a, b)),
    st.text(min_size=1, max_size=12),
    st.integers(0, 2**40),
    st.integers(0, 10**6),
    st.integers(0, 10**6),
)


@settings(max_examples=200, deadline=None)
@given(reports)
def test_report_round_trip(msg):
    assert decode(encode(msg)) == msg


def test_randomised_stream_round_trip():
    rng = np.random.default_rng(0)
    msgs = []
    for i in range(1000):
        kind = rng.integers(0, 3)
        if kind == 0:
            total = int(rng.integers(0, 50))
            msgs.append(EdgeReport(f"c{rng.integers(5)}", i, total, int(rng.integers(0, total + 1))))
        else:
            w, h = (int(v) for v in rng.integers(1, 12, size=2))
            img = Image(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))
            regions = (FaceRegion(0, 0, w, h),) if rng.random() < 0.5 else ()
            tags = tuple(int(t) for t in rng.integers(0, 2**24, size=len(regions)))
            msgs.append(AnonymizedFrame(f"c{i % 3}", i, img, regions, tags, "0123456789abcdef"))
    data = encode_stream(msgs)
    assert decode_stream(data) == msgs


def test_anon_and_raw_round_trip():
    fr, anon = anon_frame()
    assert decode(encode(anon)) == anon
    assert decode(encode(fr)) == fr
    assert decode_stream(encode(fr) + encode(anon)) == [fr, anon]


@pytest.mark.parametrize(
    "data",
    [
        b'{"camera_id":"c","masked":1,"total":2,"ts":0,"type":"report","v":2}\n',
        b'{"camera_id":"c","masked":1,"total":2,"ts":0,"type":"blob","v":1}\n',
        b'{"camera_id":"c","masked":3,"total":2,"ts":0,"type":"report","v":1}\n',
        b'{"camera_id":"c","masked":1,"total":2,"ts":0,"type":"report","v":1,"pixels":[1]}\n',
        b'{"camera_id":"c","masked":1,"total":2,"ts":0,"type":"report","v":1}',
        b"not json\n",
        b"[1,2]\n",
    ],
)
def test_malformed_headers_rejected(data):
    with pytest.raises(ProtocolError):
        decode(data)


def test_malformed_payloads_rejected():
    _, anon = anon_frame()
    good = encode(anon)
    head_end = good.index(b"\n") + 1
    with pytest.raises(ProtocolError):
        decode(good[:-1])  # missing terminator
    with pytest.raises(ProtocolError):
        decode(good[:-50])  # truncated
    with pytest.raises(ProtocolError):
        decode(good[:head_end] + (5).to_bytes(4, "big") + b"abcde\n")  # length mismatch
    with pytest.raises(ProtocolError):
        decode(good + b"x")  # trailing bytes


# --- audit -----------------------------------------------------------------------


def test_decentralized_capture_is_compliant():
    msgs = [EdgeReport(f"c{i}", i, 3, 1) for i in range(10)]
    verdict = audit(encode_stream(msgs), DeploymentMode.decentralized())
    assert verdict.compliant and verdict.messages == 10


def test_frame_in_decentralized_capture_is_flagged_at_its_index():
    _, anon = anon_frame()
    msgs = [EdgeReport("c0", 0, 3, 1), EdgeReport("c1", 0, 2, 2), anon, EdgeReport("c2", 0, 1, 0)]
    verdict = audit(encode_stream(msgs), DeploymentMode.decentralized())
    assert [i for i, _ in verdict.violations] == [2]


@pytest.mark.parametrize("f", [1.0, 2.0])
def test_unblurred_region_is_flagged(f):
    fr, anon = anon_frame(f)
    honest = audit(encode(anon), DeploymentMode.centralized(f))
    assert honest.compliant
    # fault injection: paste the raw face back into region 1
    px = anon.image.pixels.copy()
    r = anon.regions[1]
    px[r.y : r.y + r.h, r.x : r.x + r.w] = r.crop(fr.image)
    tampered = AnonymizedFrame(anon.camera_id, anon.timestamp, Image(px), anon.regions,
                               anon.appearance_tags, anon.config_checksum)
    verdict = audit(encode_stream([anon, tampered]), DeploymentMode.centralized(f))
    assert len(verdict.violations) == 1
    assert verdict.violations[0][0] == 1
    assert "region 1" in verdict.violations[0][1]


def test_raw_frame_in_centralized_capture_is_flagged():
    fr, anon = anon_frame()
    verdict = audit(encode_stream([anon, fr]), DeploymentMode.centralized(2.0))
    assert [i for i, _ in verdict.violations] == [1]


def test_baseline_is_non_compliant_by_definition():
    fr, _ = anon_frame()
    verdict = audit(encode(fr), DeploymentMode.baseline())
    assert not verdict.compliant
    assert verdict.violations[0][0] == STREAM_LEVEL
    assert not audit(b"", DeploymentMode.baseline()).compliant


def test_undecodable_capture_raises():
    with pytest.raises(AuditError):
        audit(b"garbage\n", DeploymentMode.decentralized())


def test_threshold_is_deterministic_and_ordered():
    assert detail_threshold(2.0) == detail_threshold(2.0)
    assert detail_threshold(1.0) <= detail_threshold(2.0) <= detail_threshold(5.0)


@pytest.mark.parametrize("f", [1.0, 2.0])
def test_false_positive_rate_on_honest_frames(f):
    pop = make_population(10, 5, seed=11)
    msgs = []
    for seed in range(100):
        plan = {p.person_id: {0} for p in pop}
        for fr in build_frames(pop, 1, plan, seed=seed, timestamp=seed):
            msgs.append(edge_process(fr, DeploymentMode.centralized(f)))
    assert len(msgs) == 100 and sum(len(m.regions) for m in msgs) == 1000
    verdict = audit_messages(msgs, DeploymentMode.centralized(f))
    flagged_regions = len(verdict.violations)
    assert flagged_regions / 1000 <= 0.01


def test_audit_speed():
    msgs = [EdgeReport(f"c{i % 7}", i, 5, 2) for i in range(1000)]
    data = encode_stream(msgs)
    start = time.perf_counter()
    verdict = audit(data, DeploymentMode.decentralized())
    assert time.perf_counter() - start < 5.0
    assert verdict.compliant
