"""Privacy-preserving mask recognition: face blurring, a small CNN classifier,
edge/central deployment options and a wire protocol with a privacy auditor."""
