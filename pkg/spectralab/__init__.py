"""spectralab package: a numerical lab for the 1D off-diagonal disorder model."""
