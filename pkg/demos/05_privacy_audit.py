"""
Auditing a capture
==================

Records a short centralized stream, then tampers with one frame by pasting
the original face back over its blurred version. The auditor decodes the
byte stream and flags the tampered region while passing the honest ones.
"""

from maskpriv.imaging import Image
from maskpriv.pipeline import AnonymizedFrame, DeploymentMode, build_frames, edge_process, make_population, round_robin_plan
from maskpriv.protocol import audit, detail_threshold, encode_stream

mode = DeploymentMode.centralized(2.0)
people = make_population(9, 4, seed=3)
frames = build_frames(people, 3, round_robin_plan(people, 3), seed=3)
messages = [edge_process(fr, mode) for fr in frames]
print(f"threshold for f=2: detail variance <= {detail_threshold(2.0):.2f}")
print("honest capture:", audit(encode_stream(messages), mode))

# %% paste one raw face back
victim, raw = messages[1], frames[1]
r = victim.regions[0]
px = victim.image.pixels.copy()
px[r.y : r.y + r.h, r.x : r.x + r.w] = r.crop(raw.image)
messages[1] = AnonymizedFrame(victim.camera_id, victim.timestamp, Image(px), victim.regions,
                              victim.appearance_tags, victim.config_checksum)
verdict = audit(encode_stream(messages), mode)
print("tampered capture compliant?", verdict.compliant)
for idx, reason in verdict.violations:
    print(f"  message {idx}: {reason}")

# The same stream is never acceptable from a decentralized deployment.
print("as decentralized:", len(audit(encode_stream(messages), DeploymentMode.decentralized()).violations), "violations")
