"""Face localisation behind a small pluggable interface.

``ORACLE`` returns ground-truth regions carried with synthetic frames.
``HEURISTIC`` is a skin-colour blob finder tuned for the procedural generator;
it is not meant for real footage.
"""

from __future__ import annotations

import enum
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import InvalidParameterError, MissingMetadataError
from .imaging import FaceRegion, Image, is_skin

MIN_FACE_SIDE = 12


class DetectorKind(enum.Enum):
    ORACLE = "oracle"
    HEURISTIC = "heuristic"


def skin_components(image: Image) -> list[FaceRegion]:
    mask = is_skin(image.pixels)
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    regions = []
    for sl in ndimage.find_objects(labels):
        ys, xs = sl
        w, h = xs.stop - xs.start, ys.stop - ys.start
        if w > MIN_FACE_SIDE and h > MIN_FACE_SIDE:
            regions.append(FaceRegion(xs.start, ys.start, w, h))
    # find_objects is ordered by label id, i.e. raster order of first pixel
    return regions


def detect_faces(
    image: Image,
    metadata: Optional[Sequence[FaceRegion]] = None,
    kind: DetectorKind = DetectorKind.ORACLE,
) -> list[FaceRegion]:
    """Locate faces in ``image``.

    ``metadata`` is the list of ground-truth regions that accompanies a
    synthetic frame; the oracle detector passes it through unchanged.
    """
    kind = DetectorKind(kind)
    if kind is DetectorKind.ORACLE:
        if metadata is None:
            raise MissingMetadataError("oracle detector needs ground-truth face regions")
        regions = list(metadata)
        for r in regions:
            if not r.fits(image):
                raise InvalidParameterError(f"ground-truth region {r} outside the image")
        return regions
    return skin_components(image)
