"""Derive high-precision reference constants for the test suite.

Run with python3; paste the printed block into tests/reference_values.py.
Uses 50-digit arithmetic so the frozen doubles are exact to the last ulp.
"""

import mpmath as mp

mp.mp.dps = 50


def h2(p):
    return -(p * mp.log(p) + (1 - p) * mp.log(1 - p))


def h3_sym(d):
    """Entropy of (1-2d, d, d)."""
    return -((1 - 2 * d) * mp.log(1 - 2 * d) + 2 * d * mp.log(d))


LOG2 = mp.log(2)


def main():
    out = []

    h2_011_bits = h2(mp.mpf("0.11")) / LOG2
    out.append(("H2_011_BITS", h2_011_bits))
    out.append(("C_BSC11_BITS", 1 - h2_011_bits))

    rd_rate = (h2(mp.mpf(1) / 3) - h2(mp.mpf(2) / 9)) / LOG2
    out.append(("RD_BERN13_D29_BITS", rd_rate))

    # Ternary symmetric source, uniform reconstruction: delta* solves
    # log 3 - H(1-2d, d, d) = R (nats); distortion (2/3) * 2 delta*.
    for name, r in (("TERN_UNIF_R030", mp.mpf("0.30")),
                    ("TERN_UNIF_R060", mp.mpf("0.60"))):
        dstar = mp.findroot(lambda d: mp.log(3) - h3_sym(d) - r,
                            (mp.mpf("1e-6"), mp.mpf(1) / 3 - mp.mpf("1e-6")),
                            solver="bisect", tol=mp.mpf("1e-40"))
        out.append((name + "_DSTAR", dstar))
        out.append((name + "_DIST", mp.mpf(2) / 3 * 2 * dstar))

    # Reconstruction (1/2, 1/2, 0): delta* solves (2/3)(log 2 - H2(d)) = R;
    # distortion (2/3) delta*.
    for name, r in (("TERN_HALF_R025", mp.mpf("0.25")),):
        dstar = mp.findroot(lambda d: mp.mpf(2) / 3 * (LOG2 - h2(d)) - r,
                            (mp.mpf("1e-6"), mp.mpf("0.5") - mp.mpf("1e-6")),
                            solver="bisect", tol=mp.mpf("1e-40"))
        out.append((name + "_DSTAR", dstar))
        out.append((name + "_DIST", mp.mpf(2) / 3 * dstar))

    print('"""Frozen reference constants (generated by tools/derive_reference_values.py)."""')
    print()
    for name, val in out:
        print(f"{name} = {mp.nstr(val, 17)}")


if __name__ == "__main__":
    main()
