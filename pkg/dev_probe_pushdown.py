"""Dev probe: does the bisection result match an exhaustive scan?"""
import numpy as np

from varibit.fixed_point import FixedPointFormat, quantize_tensor
from varibit.rng import substream
from varibit.stats import empirical_distribution, kl_divergence
from varibit.switching import histogram_range, push_down, push_down_domain


def scan_oracle(w, current, resolution, eps, base):
    domain = push_down_domain(w, current)
    rng_range = histogram_range(w)
    p = empirical_distribution(w, resolution, rng_range)
    for fmt in domain:
        q = quantize_tensor(w, fmt, substream(base, fmt.frac_length))
        if kl_divergence(p, empirical_distribution(q.values, resolution, rng_range)) < eps:
            return fmt
    return domain[-1]


def main(trials=400):
    rng = np.random.default_rng(20240817)
    mismatches = 0
    for t in range(trials):
        n = int(rng.integers(2000, 10001))
        kind = rng.integers(0, 3)
        scale = float(rng.uniform(0.05, 3.0))
        if kind == 0:
            w = rng.normal(0, scale, n)
        elif kind == 1:
            w = rng.uniform(-scale, scale, n)
        else:
            w = rng.laplace(0, scale, n)
        current = FixedPointFormat(32, 16)
        resolution = int(rng.integers(16, 49))
        eps = float(rng.choice([0.02, 0.05, 0.1]))
        base = int(rng.integers(0, 2**63))
        got = push_down(w, current, resolution, eps, base)
        want = scan_oracle(w, current, resolution, eps, base)
        if got != want:
            mismatches += 1
            print(f"trial {t}: n={n} kind={kind} scale={scale:.2f} r={resolution} "
                  f"eps={eps}: bisect={got} scan={want}")
    print(f"{mismatches}/{trials} mismatches")


if __name__ == "__main__":
    main()
