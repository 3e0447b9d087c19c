"""Dev probe 2: inspect KL sequences and mismatch rates per regime."""
import numpy as np

from varibit.fixed_point import FixedPointFormat, quantize_tensor
from varibit.rng import substream
from varibit.stats import empirical_distribution, kl_divergence
from varibit.switching import histogram_range, push_down, push_down_domain


def kl_sequence(w, current, resolution, base):
    domain = push_down_domain(w, current)
    rng_range = histogram_range(w)
    p = empirical_distribution(w, resolution, rng_range)
    out = []
    for fmt in domain:
        q = quantize_tensor(w, fmt, substream(base, fmt.frac_length))
        out.append(kl_divergence(p, empirical_distribution(q.values, resolution, rng_range)))
    return domain, out


def show_failing_case():
    # regenerate trial 91 from probe 1
    rng = np.random.default_rng(20240817)
    for t in range(92):
        n = int(rng.integers(2000, 10001))
        kind = rng.integers(0, 3)
        scale = float(rng.uniform(0.05, 3.0))
        if kind == 0:
            w = rng.normal(0, scale, n)
        elif kind == 1:
            w = rng.uniform(-scale, scale, n)
        else:
            w = rng.laplace(0, scale, n)
        resolution = int(rng.integers(16, 49))
        eps = float(rng.choice([0.02, 0.05, 0.1]))
        base = int(rng.integers(0, 2**63))
        if t == 91:
            domain, kls = kl_sequence(w, FixedPointFormat(32, 16), resolution, base)
            for fmt, kl in zip(domain, kls):
                marker = " <-- eps" if kl < eps else ""
                print(f"  FL={fmt.frac_length:2d} WL={fmt.word_length:2d} KL={kl:.5f}{marker}")
            print(f"  eps={eps} r={resolution} n={n}")


def rate(trials, eps_choices, r_lo, r_hi, n_lo, n_hi, scale_lo, scale_hi, seed):
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(trials):
        n = int(rng.integers(n_lo, n_hi + 1))
        kind = rng.integers(0, 3)
        scale = float(rng.uniform(scale_lo, scale_hi))
        if kind == 0:
            w = rng.normal(0, scale, n)
        elif kind == 1:
            w = rng.uniform(-scale, scale, n)
        else:
            w = rng.laplace(0, scale, n)
        current = FixedPointFormat(32, 16)
        resolution = int(rng.integers(r_lo, r_hi + 1))
        eps = float(rng.choice(eps_choices))
        base = int(rng.integers(0, 2**63))
        got = push_down(w, current, resolution, eps, base)
        domain, kls = kl_sequence(w, current, resolution, base)
        want = next((f for f, k in zip(domain, kls) if k < eps), domain[-1])
        if got != want:
            mismatches += 1
    return mismatches


if __name__ == "__main__":
    show_failing_case()
    print("regime rates (mismatches/trials):")
    print("  tight eps=0.02, r 16-48:", rate(300, [0.02], 16, 48, 2000, 10000, 0.05, 3.0, 1), "/300")
    print("  eps=0.05, r 16-32:      ", rate(600, [0.05], 16, 32, 2000, 10000, 0.05, 3.0, 2), "/600")
    print("  eps=0.05, r 32:         ", rate(600, [0.05], 32, 32, 1000, 10000, 0.1, 3.0, 3), "/600")
