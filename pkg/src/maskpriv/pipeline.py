"""Edge and aggregator logic for the three deployment options.

* ``baseline``      - the edge forwards raw frames; an external service classifies.
                      Kept only as the privacy-violating reference.
* ``centralized``   - the edge blurs every detected face and forwards the
                      anonymised frame; an external service classifies it.
* ``decentralized`` - the edge classifies locally and forwards counts only.

Edges forward ``(persons_total, persons_masked)`` rather than a percentage so
the central aggregate over cameras with different head counts stays exact.
"""

from __future__ import annotations

import enum
import hashlib
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Optional, Protocol, Sequence, Union

import numpy as np

from .classifier import ClassifierModel, predict_batch, preprocess
from .detector import DetectorKind, detect_faces
from .errors import ConfigurationError, InvalidParameterError, InvalidPlanError
from .imaging import (
    RGB,
    FaceRegion,
    Image,
    MaskLabel,
    SynthSpec,
    blur_regions,
    is_skin,
    synthesize,
    MASK_PALETTE,
)


class ModeKind(enum.Enum):
    BASELINE = "baseline"
    CENTRALIZED = "centralized"
    DECENTRALIZED = "decentralized"


@dataclass(frozen=True)
class DeploymentMode:
    kind: ModeKind
    blur: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModeKind(self.kind))
        if self.kind is ModeKind.CENTRALIZED:
            if self.blur is None:
                raise ConfigurationError("centralized mode requires a blur factor")
            if self.blur < 1:
                raise InvalidParameterError(f"blur factor must be >= 1, got {self.blur}")
            object.__setattr__(self, "blur", float(self.blur))
        elif self.blur is not None:
            raise ConfigurationError(f"{self.kind.value} mode takes no blur factor")

    @classmethod
    def baseline(cls):
        return cls(ModeKind.BASELINE)

    @classmethod
    def centralized(cls, blur: float):
        return cls(ModeKind.CENTRALIZED, blur)

    @classmethod
    def decentralized(cls):
        return cls(ModeKind.DECENTRALIZED)

    @classmethod
    def parse(cls, name: str, blur: Optional[float] = None) -> "DeploymentMode":
        kind = ModeKind(name)
        return cls(kind, blur if kind is ModeKind.CENTRALIZED else None)


# ---------------------------------------------------------------------------
# messages


@dataclass(frozen=True)
class GroundTruth:
    face: FaceRegion
    label: MaskLabel
    person_id: str
    clothing_color: RGB


@dataclass(frozen=True)
class Frame:
    camera_id: str
    timestamp: int
    image: Image
    truth: tuple[GroundTruth, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "truth", tuple(self.truth))
        for t in self.truth:
            t.face.check_inside(self.image)

    @property
    def regions(self) -> list[FaceRegion]:
        return [t.face for t in self.truth]


@dataclass(frozen=True)
class EdgeReport:
    camera_id: str
    timestamp: int
    persons_total: int
    persons_masked: int

    def __post_init__(self):
        if not 0 <= self.persons_masked <= self.persons_total:
            raise InvalidParameterError(
                f"need 0 <= masked <= total, got masked={self.persons_masked} total={self.persons_total}"
            )


@dataclass(frozen=True)
class AnonymizedFrame:
    """Frame whose listed face regions have been blurred on the edge.

    Build it with :meth:`from_raw`; the plain constructor is for decoders that
    already hold a blurred image.
    """

    camera_id: str
    timestamp: int
    image: Image
    regions: tuple[FaceRegion, ...]
    appearance_tags: tuple[int, ...]
    config_checksum: str

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(self, "appearance_tags", tuple(int(t) for t in self.appearance_tags))
        if len(self.regions) != len(self.appearance_tags):
            raise InvalidParameterError("one appearance tag per region is required")
        for r in self.regions:
            r.check_inside(self.image)

    @classmethod
    def from_raw(cls, camera_id, timestamp, raw: Image, regions, blur: float, checksum: str):
        regions = tuple(regions)
        tags = tuple(appearance_tag(raw, r) for r in regions)
        return cls(camera_id, timestamp, blur_regions(raw, regions, blur), regions, tags, checksum)


EdgeMessage = Union[EdgeReport, AnonymizedFrame, Frame]


@dataclass(frozen=True)
class AggregateResult:
    persons_total: int
    persons_masked: int
    per_camera: Mapping[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def ratio_masked(self) -> Optional[float]:
        """Masked share, or ``None`` when nobody was counted (ratio undefined)."""
        if self.persons_total == 0:
            return None
        return self.persons_masked / self.persons_total

    @property
    def ratio_defined(self) -> bool:
        return self.persons_total > 0


# ---------------------------------------------------------------------------
# appearance tags

TAG_LEVELS = 8


def appearance_tag(image: Image, face: FaceRegion) -> int:
    """Quantised mean colour of a strip just below the face, packed as 24-bit RGB.

    Falls back to the strip above the face when the face touches the bottom edge.
    Collision-prone by design: 8 levels per channel.
    """
    strip = max(2, face.h // 4)
    lo, hi = face.y + face.h, min(image.height, face.y + face.h + strip)
    if hi <= lo:
        lo, hi = max(0, face.y - strip), face.y
    if hi <= lo:
        lo, hi = face.y, face.y + face.h
    px = image.pixels[lo:hi, face.x : face.x + face.w].reshape(-1, 3).astype(np.float64)
    step = 256 // TAG_LEVELS
    q = np.minimum(px.mean(axis=0) // step, TAG_LEVELS - 1).astype(int)
    centre = q * step + step // 2
    return int(centre[0]) << 16 | int(centre[1]) << 8 | int(centre[2])


# ---------------------------------------------------------------------------
# classifiers usable on the edge or centrally


class MaskClassifier(Protocol):
    def classify(
        self, image: Image, regions: Sequence[FaceRegion], *, camera_id: str, timestamp: int
    ) -> list[MaskLabel]: ...

    def digest(self) -> str: ...


class ModelClassifier:
    def __init__(self, model: ClassifierModel):
        self.model = model
        self._digest = model.digest()

    def classify(self, image, regions, *, camera_id=None, timestamp=None):
        if not regions:
            return []
        x = np.stack([preprocess(image, r, self.model.input_size) for r in regions])
        probs = predict_batch(self.model, x.transpose(0, 3, 1, 2))
        return [MaskLabel(int(i)) for i in probs.argmax(axis=1)]

    def digest(self) -> str:
        return self._digest


class GroundTruthClassifier:
    """Perfect classifier: looks labels up from the frames' ground truth."""

    def __init__(self, frames: Sequence[Frame]):
        self._labels = {
            (fr.camera_id, fr.timestamp, t.face): t.label for fr in frames for t in fr.truth
        }

    def classify(self, image, regions, *, camera_id, timestamp):
        try:
            return [self._labels[(camera_id, timestamp, r)] for r in regions]
        except KeyError as exc:
            raise InvalidParameterError(f"no ground truth for region {exc}") from None

    def digest(self) -> str:
        return "ground-truth"


def as_classifier(model) -> MaskClassifier:
    if isinstance(model, ClassifierModel):
        return ModelClassifier(model)
    if hasattr(model, "classify") and hasattr(model, "digest"):
        return model
    raise ConfigurationError(f"not a usable classifier: {model!r}")


def config_checksum(model_digest: str, blur: float) -> str:
    """Ties an anonymised stream to the model and blur factor it is meant for."""
    h = hashlib.sha256(f"{model_digest}|{float(blur)!r}".encode("utf-8"))
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# edge side


def count_report(camera_id, timestamp, labels: Sequence[MaskLabel]) -> EdgeReport:
    masked = sum(1 for lab in labels if lab == MaskLabel.MASK)
    return EdgeReport(camera_id, timestamp, len(labels), masked)


def classify_frame(frame: Frame, classifier, detector: DetectorKind = DetectorKind.ORACLE) -> EdgeReport:
    """Detect and classify faces in a raw frame and count them.

    Shared by decentralized edges and the baseline's external service, which is
    what makes the two deployments count identically.
    """
    regions = detect_faces(frame.image, frame.regions, detector)
    labels = as_classifier(classifier).classify(
        frame.image, regions, camera_id=frame.camera_id, timestamp=frame.timestamp
    )
    return count_report(frame.camera_id, frame.timestamp, labels)


def edge_process(
    frame: Frame,
    mode: DeploymentMode,
    model=None,
    detector: DetectorKind = DetectorKind.ORACLE,
) -> EdgeMessage:
    """Turn one camera frame into the message the edge is allowed to emit.

    In centralized mode ``model`` is optional and only contributes its digest
    to the configuration checksum.
    """
    if mode.kind is ModeKind.BASELINE:
        return frame
    if mode.kind is ModeKind.CENTRALIZED:
        regions = detect_faces(frame.image, frame.regions, detector)
        digest = as_classifier(model).digest() if model is not None else ""
        return AnonymizedFrame.from_raw(
            frame.camera_id,
            frame.timestamp,
            frame.image,
            regions,
            mode.blur,
            config_checksum(digest, mode.blur),
        )
    if model is None:
        raise ConfigurationError("decentralized mode classifies on the edge and needs a model")
    return classify_frame(frame, model, detector)


class EdgeNode:
    """One camera's edge device; frames must arrive in timestamp order."""

    def __init__(self, camera_id: str, mode: DeploymentMode, model=None,
                 detector: DetectorKind = DetectorKind.ORACLE):
        if mode.kind is ModeKind.DECENTRALIZED and model is None:
            raise ConfigurationError("decentralized mode classifies on the edge and needs a model")
        self.camera_id = camera_id
        self.mode = mode
        self.model = model
        self.detector = detector
        self._last_ts: Optional[int] = None

    def process(self, frame: Frame) -> EdgeMessage:
        if frame.camera_id != self.camera_id:
            raise InvalidParameterError(f"frame from {frame.camera_id!r} sent to edge {self.camera_id!r}")
        if self._last_ts is not None and frame.timestamp < self._last_ts:
            raise InvalidParameterError("frames must be processed in timestamp order")
        self._last_ts = frame.timestamp
        return edge_process(frame, self.mode, self.model, self.detector)


# ---------------------------------------------------------------------------
# central side


def classify_regions(msg: AnonymizedFrame, model, blur: Optional[float] = None) -> list[MaskLabel]:
    clf = as_classifier(model)
    if blur is not None and config_checksum(clf.digest(), blur) != msg.config_checksum:
        raise ConfigurationError(
            f"stream from {msg.camera_id!r} was anonymised for a different model/blur configuration"
        )
    return clf.classify(msg.image, list(msg.regions), camera_id=msg.camera_id, timestamp=msg.timestamp)


def central_classify(msg: AnonymizedFrame, model, blur: Optional[float] = None) -> EdgeReport:
    """Classify every region of an anonymised frame.

    With ``blur`` given, the frame's configuration checksum must match the
    model digest and blur factor, otherwise :class:`ConfigurationError`.
    """
    return count_report(msg.camera_id, msg.timestamp, classify_regions(msg, model, blur))


def aggregate(reports: Sequence[EdgeReport]) -> AggregateResult:
    per_camera: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    for r in reports:
        per_camera[r.camera_id][0] += r.persons_total
        per_camera[r.camera_id][1] += r.persons_masked
    total = sum(v[0] for v in per_camera.values())
    masked = sum(v[1] for v in per_camera.values())
    return AggregateResult(total, masked, {k: tuple(per_camera[k]) for k in sorted(per_camera)})


def dedup_centralized(
    items: Sequence[tuple[AnonymizedFrame, Sequence[MaskLabel]]],
    window: Optional[int] = None,
) -> AggregateResult:
    """Count each appearance tag once per time window (default: the whole run).

    A group takes the majority label of its sightings; ties go to the earliest
    sighting. Groups are credited to the camera that saw them first. Two people
    whose clothing quantises to the same tag are merged, i.e. undercounted.
    """
    sightings = []
    for msg, labels in items:
        if len(labels) != len(msg.regions):
            raise InvalidParameterError("one label per region is required")
        for i, (tag, lab) in enumerate(zip(msg.appearance_tags, labels)):
            sightings.append((msg.timestamp, msg.camera_id, i, tag, MaskLabel(lab)))
    sightings.sort(key=lambda s: (s[0], s[1], s[2]))

    groups: dict[tuple, list] = {}
    for ts, cam, _, tag, lab in sightings:
        key = (tag, None if window is None else ts // window)
        groups.setdefault(key, []).append((cam, lab))

    per_camera: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    for members in groups.values():
        n_mask = sum(1 for _, lab in members if lab == MaskLabel.MASK)
        n_plain = len(members) - n_mask
        if n_mask != n_plain:
            masked = n_mask > n_plain
        else:
            masked = members[0][1] == MaskLabel.MASK
        cam = members[0][0]
        per_camera[cam][0] += 1
        per_camera[cam][1] += int(masked)
    total = sum(v[0] for v in per_camera.values())
    n_masked = sum(v[1] for v in per_camera.values())
    return AggregateResult(total, n_masked, {k: tuple(per_camera[k]) for k in sorted(per_camera)})


# ---------------------------------------------------------------------------
# multi-camera simulation


@dataclass(frozen=True)
class Person:
    person_id: str
    masked: bool
    clothing_color: RGB
    hard_case: bool = False
    mask_color: RGB = MASK_PALETTE[0]


def bucket_colors() -> list[RGB]:
    """Centres of all appearance-tag buckets that do not look like skin."""
    step = 256 // TAG_LEVELS
    centres = [c * step + step // 2 for c in range(TAG_LEVELS)]
    return [(r, g, b) for r in centres for g in centres for b in centres if not is_skin((r, g, b))]


def make_population(n: int, n_masked: int, seed: int = 0) -> list[Person]:
    """``n`` people, the first ``n_masked`` masked, each in a distinct clothing bucket."""
    if not 0 <= n_masked <= n:
        raise InvalidParameterError("need 0 <= n_masked <= n")
    palette = bucket_colors()
    if n > len(palette):
        raise InvalidParameterError(f"at most {len(palette)} people have distinct clothing tags")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(palette), size=n, replace=False)
    return [
        Person(
            person_id=f"person{i:03d}",
            masked=i < n_masked,
            clothing_color=palette[picks[i]],
            mask_color=MASK_PALETTE[int(rng.integers(len(MASK_PALETTE)))],
        )
        for i in range(n)
    ]


def round_robin_plan(population: Sequence[Person], cameras: int) -> dict[str, set[int]]:
    return {p.person_id: {i % cameras} for i, p in enumerate(population)}


def camera_name(index: int) -> str:
    return f"cam{index}"


def compose_frame(camera_id: str, timestamp: int, specs: Sequence[SynthSpec],
                  background: RGB = (20, 20, 20), tile: int = 64) -> Frame:
    """Lay synthesized people side by side into one camera frame."""
    if not specs:
        return Frame(camera_id, timestamp, Image.blank(tile, tile, background), ())
    tiles, truth = [], []
    offset = 0
    for spec in specs:
        s = synthesize(spec)
        tiles.append(s.image.pixels)
        truth.append(GroundTruth(s.face.shifted(dx=offset), s.label, spec.person_id, spec.clothing_color))
        offset += s.image.width
    height = max(t.shape[0] for t in tiles)
    canvas = np.empty((height, offset, 3), dtype=np.uint8)
    canvas[...] = background
    x = 0
    for t in tiles:
        canvas[: t.shape[0], x : x + t.shape[1]] = t
        x += t.shape[1]
    return Frame(camera_id, timestamp, Image(canvas), tuple(truth))


def appearance_seed(seed: int, person_index: int, camera: int) -> int:
    return int(np.random.SeedSequence([seed, person_index, camera]).generate_state(1, np.uint64)[0])


def build_frames(population: Sequence[Person], cameras: int, plan: Mapping[str, set[int]],
                 seed: int = 0, image_size: int = 64, timestamp: int = 0) -> list[Frame]:
    """One frame per camera; each appearance is an independently rendered view."""
    if cameras < 1:
        raise InvalidPlanError("need at least one camera")
    per_cam: list[list[SynthSpec]] = [[] for _ in range(cameras)]
    for idx, p in enumerate(population):
        cams = plan.get(p.person_id)
        if not cams:
            raise InvalidPlanError(f"{p.person_id} appears in no camera")
        for c in sorted(cams):
            if not 0 <= c < cameras:
                raise InvalidPlanError(f"{p.person_id} assigned to unknown camera {c}")
            per_cam[c].append(
                SynthSpec(
                    image_size=image_size,
                    masked=p.masked,
                    hard_case=p.hard_case,
                    mask_color=p.mask_color,
                    person_id=p.person_id,
                    clothing_color=p.clothing_color,
                    rng_seed=appearance_seed(seed, idx, c),
                )
            )
    return [compose_frame(camera_name(c), timestamp, per_cam[c], tile=image_size) for c in range(cameras)]


@dataclass
class SimulationResult:
    naive: AggregateResult
    true_ratio: float
    dedup: Optional[AggregateResult]
    messages: list
    reports: list[EdgeReport]
    frames: list[Frame]


def simulate_overlap(
    population: Sequence[Person],
    cameras: int,
    plan: Mapping[str, set[int]],
    mode: DeploymentMode,
    model=None,
    detector: DetectorKind = DetectorKind.ORACLE,
    seed: int = 0,
    image_size: int = 64,
) -> SimulationResult:
    """Run a whole camera fleet through ``mode`` and aggregate naively.

    ``model=None`` uses a perfect (ground-truth) classifier. For centralized
    mode the model must have been trained at ``mode.blur``. ``dedup`` is only
    available in centralized mode.
    """
    if not population:
        raise InvalidPlanError("empty population")
    frames = build_frames(population, cameras, plan, seed, image_size)
    clf = as_classifier(model) if model is not None else GroundTruthClassifier(frames)

    messages, reports, anon_items = [], [], []
    for fr in frames:
        msg = EdgeNode(fr.camera_id, mode, clf, detector).process(fr)
        messages.append(msg)
        if mode.kind is ModeKind.BASELINE:
            reports.append(classify_frame(msg, clf, detector))
        elif mode.kind is ModeKind.CENTRALIZED:
            labels = classify_regions(msg, clf, mode.blur)
            anon_items.append((msg, labels))
            reports.append(count_report(msg.camera_id, msg.timestamp, labels))
        else:
            reports.append(msg)

    true_ratio = sum(p.masked for p in population) / len(population)
    dedup = dedup_centralized(anon_items) if mode.kind is ModeKind.CENTRALIZED else None
    return SimulationResult(aggregate(reports), true_ratio, dedup, messages, reports, frames)
