import numpy as np
import pytest

from maskpriv.detector import DetectorKind, detect_faces
from maskpriv.errors import MissingMetadataError
from maskpriv.imaging import FaceRegion, Image, SynthSpec, synthesize
from maskpriv.pipeline import compose_frame


def test_oracle_passes_ground_truth_through():
    s = synthesize(SynthSpec(rng_seed=4))
    assert detect_faces(s.image, [s.face], DetectorKind.ORACLE) == [s.face]


def test_oracle_needs_metadata():
    with pytest.raises(MissingMetadataError):
        detect_faces(Image.blank(40, 40), None, DetectorKind.ORACLE)


def test_heuristic_finds_nothing_on_black():
    assert detect_faces(Image.blank(64, 64), kind=DetectorKind.HEURISTIC) == []


@pytest.mark.parametrize("seed", range(12))
def test_heuristic_localises_unmasked_face(seed):
    rng = np.random.default_rng(seed)
    clothing = (int(rng.integers(0, 90)), int(rng.integers(60, 200)), int(rng.integers(120, 256)))
    s = synthesize(SynthSpec(masked=False, clothing_color=clothing, rng_seed=seed))
    found = detect_faces(s.image, kind="heuristic")
    assert len(found) == 1
    assert found[0].iou(s.face) >= 0.5


def test_heuristic_is_deterministic_and_in_bounds():
    specs = [SynthSpec(rng_seed=i, person_id=f"p{i}", clothing_color=(20, 40 * i, 200)) for i in range(4)]
    frame = compose_frame("c", 0, specs)
    a = detect_faces(frame.image, kind=DetectorKind.HEURISTIC)
    b = detect_faces(frame.image, kind=DetectorKind.HEURISTIC)
    assert a == b
    assert len(a) == 4
    assert all(r.fits(frame.image) for r in a)
    for truth in frame.truth:
        assert max(r.iou(truth.face) for r in a) >= 0.5


def test_heuristic_ignores_small_blobs():
    px = np.zeros((40, 40, 3), dtype=np.uint8)
    px[5:15, 5:15] = (200, 140, 110)  # 10x10 skin patch, below the size floor
    px[20:35, 20:35] = (200, 140, 110)
    assert detect_faces(Image(px), kind=DetectorKind.HEURISTIC) == [FaceRegion(20, 20, 15, 15)]
