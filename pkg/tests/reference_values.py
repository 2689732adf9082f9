"""Frozen reference constants (generated by tools/derive_reference_values.py)."""

H2_011_BITS = 0.499915958164528
C_BSC11_BITS = 0.500084041835472
RD_BERN13_D29_BITS = 0.15409132754586924
TERN_UNIF_R030_DSTAR = 0.14357344003463191
TERN_UNIF_R030_DIST = 0.19143125337950921
TERN_UNIF_R060_DSTAR = 0.069325432089586359
TERN_UNIF_R060_DIST = 0.092433909452781812
TERN_HALF_R025_DSTAR = 0.096868414446376969
TERN_HALF_R025_DIST = 0.064578942964251313
