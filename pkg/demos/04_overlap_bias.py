"""
When one person is seen by several cameras
==========================================

Ten people, six of them masked, walk past three cameras. Normally each is
seen once. If one masked person lingers and shows up on all three cameras,
naive summing over cameras reports 8 masked out of 12 sightings instead of
6 out of 10. Centralized deployments can undo most of this with a coarse
clothing-colour tag; decentralized ones only ever see the counts.
"""

from maskpriv.experiments import SCENARIOS, run_overlap
from maskpriv.pipeline import DeploymentMode


def fmt(r):
    return "undefined" if r is None else f"{r:.4f}"


print(f"{'duplicate':>10} {'mode':>13} {'naive':>7} {'dedup':>9} {'true':>7}")
for dup in SCENARIOS:
    for mode in (DeploymentMode.centralized(5.0), DeploymentMode.decentralized()):
        res = run_overlap(persons=10, masked=6, cameras=3, duplicate=dup, mode=mode)
        dedup = fmt(res.dedup.ratio_masked) if res.dedup else "n/a"
        print(f"{dup:>10} {mode.kind.value:>13} {fmt(res.naive.ratio_masked):>7} {dedup:>9} {fmt(res.true_ratio):>7}")

# Duplicating a masked person inflates the ratio, duplicating an unmasked
# one deflates it. Tags are coarse on purpose, so two people in similar
# clothes can merge; dedup then undercounts rather than overcounts.
