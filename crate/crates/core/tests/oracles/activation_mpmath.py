"""Extended-precision reference values for the analytic activation.

Run: python3 activation_mpmath.py  (prints Rust array literal rows)
"""
from mpmath import mp, mpf, log, exp

mp.dps = 50

B = [mpf("1.7"), mpf("1.3"), mpf("0.8"), mpf("0.6"), mpf("0.35"), mpf("1.4"), mpf("0.05")]
POINTS = ["0", "0.01", "0.5", "1.25", "3", "7.5", "12", "20", "37.5", "60"]


def act(p):
    b1, b2, b3, b4, b5, b6, b7 = B
    inner = b4 + (exp(b5 * p) - 1) ** b6
    return b1 * log(b2 + b3 * log(inner)) + b7 * p


for s in POINTS:
    print(f"    ({s}_f64, {mp.nstr(act(mpf(s)), 20)}),")
