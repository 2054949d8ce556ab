"""
Three ways to deploy the camera
===============================

The same frame leaves the edge device in three different shapes:

* baseline forwards the raw frame,
* centralized blurs every face and ships the anonymized frame,
* decentralized classifies locally and ships only two counts.

The script prints what goes over the wire in each case and how many bytes
that costs. A ground-truth classifier stands in for a trained model so the
counts are exact.
"""

from maskpriv.imaging import SynthSpec
from maskpriv.pipeline import DeploymentMode, GroundTruthClassifier, central_classify, compose_frame, edge_process
from maskpriv.protocol import encode

specs = [
    SynthSpec(masked=m, person_id=f"p{i}", clothing_color=c, rng_seed=i)
    for i, (m, c) in enumerate([(True, (40, 60, 180)), (False, (150, 40, 40)), (True, (30, 120, 60))])
]
frame = compose_frame("entrance", timestamp=0, specs=specs)
oracle = GroundTruthClassifier([frame])

for mode in (DeploymentMode.baseline(), DeploymentMode.centralized(5.0), DeploymentMode.decentralized()):
    msg = edge_process(frame, mode, oracle)
    wire = encode(msg)
    print(f"{mode.kind.value:>13}: {type(msg).__name__:<15} {len(wire):>6} bytes")
    if mode.kind.value == "centralized":
        print(f"{'':>15}tags {[f'{t:06x}' for t in msg.appearance_tags]}, checksum {msg.config_checksum}")
        print(f"{'':>15}central service counts {central_classify(msg, oracle, 5.0)}")
    if mode.kind.value == "decentralized":
        print(f"{'':>15}{wire.decode().strip()}")
