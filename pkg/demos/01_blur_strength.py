"""
How strong is a blur factor?
============================

A blur factor ``f`` divides the face extent by the kernel width, so small
``f`` means a wide kernel. This walk-through blurs one synthetic face at a
few factors, prints the kernel it used and how much fine detail survives,
and writes the results as PPM files you can open in any image viewer.
"""

from pathlib import Path

from maskpriv.imaging import SynthSpec, blur_region, make_kernel, region_variance, synthesize, write_image
from maskpriv.protocol import detail_variance

out = Path("demo_output/blur")
out.mkdir(parents=True, exist_ok=True)

sample = synthesize(SynthSpec(masked=False, rng_seed=7))
face = sample.face
extent = min(face.w, face.h)
print(f"face box {face}, extent {extent}px")

raw_detail = detail_variance(sample.image, face).max()
raw_var = region_variance(sample.image, face).max()
write_image(sample.image, out / "raw.ppm")

# %% one line per blur factor
print(f"{'f':>4} {'taps':>5} {'sigma':>6} {'variance':>9} {'detail':>9}")
for f in (32, 16, 8, 5, 3, 2, 1):
    k = make_kernel(extent, f)
    blurred = blur_region(sample.image, face, f)
    var = region_variance(blurred, face).max() / raw_var
    detail = detail_variance(blurred, face).max() / raw_detail
    print(f"{f:>4} {k.size:>5} {k.sigma:>6.2f} {var:>9.1%} {detail:>9.2%}")
    write_image(blurred, out / f"f{f:02d}.ppm")

# Plain variance stays high even at f=1: the face-versus-background contrast
# is a low-frequency signal and survives any Gaussian. The Laplacian detail
# statistic is what actually drops, and it is what the privacy auditor uses.
print(f"images written to {out}/")
