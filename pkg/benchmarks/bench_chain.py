"""Time the Gibbs-within-MH chain on both backends.

    python benchmarks/bench_chain.py --samples 500 --burn-in 200 --repeats 20

Also times a full FPO detection on the three-change scenario with each
backend, and checks that both backends produced the same chain.
"""

import argparse
import time

import numpy as np

from circadian_cpd import detector, sampler, synthetic


def time_chain(backend, n_obs, sum_logz, priors, n_samples, burn_in, repeats):
    best = np.inf
    for r in range(repeats):
        bitgen = np.random.PCG64(r)
        t0 = time.perf_counter()
        sampler.chain_from_stats(n_obs, sum_logz, priors, n_samples, burn_in, bitgen, backend=backend, check=False)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=500)
    ap.add_argument("--burn-in", type=int, default=200)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--K", type=int, default=3)
    ap.add_argument("--n-obs", type=int, default=40)
    ap.add_argument("--detect-steps", type=int, default=40, help="length of the FPO detection run (0 to skip)")
    args = ap.parse_args()

    backends = ["python"] + (["cython"] if sampler.BACKEND == "cython" else [])
    rng = np.random.default_rng(0)
    z = rng.dirichlet(np.full(args.K, 2.0), size=args.n_obs)
    sum_logz = np.log(z).sum(axis=0)
    priors = sampler.FpoPriors()

    print(f"active backend: {sampler.BACKEND}")
    print(f"chain: K={args.K}, n_obs={args.n_obs}, {args.burn_in}+{args.samples} iterations, best of {args.repeats}")
    timings = {}
    for b in backends:
        timings[b] = time_chain(b, args.n_obs, sum_logz, priors, args.samples, args.burn_in, args.repeats)
        print(f"  {b:7s} {1e3 * timings[b]:9.3f} ms")
    if len(timings) == 2:
        print(f"  speedup {timings['python'] / timings['cython']:.1f}x")
        chains = [sampler.chain_from_stats(args.n_obs, sum_logz, priors, args.samples, args.burn_in,
                                           np.random.PCG64(7), backend=b) for b in backends]
        print(f"  max |eta diff| {np.max(np.abs(chains[0].eta - chains[1].eta)):.2e}")

    if args.detect_steps:
        z_tilde, _ = synthetic.simulate_probability_vectors(0)
        z_tilde = z_tilde[: args.detect_steps]
        print(f"fpo_detect: T={z_tilde.shape[0]}, S={args.samples}")
        for b in backends:
            t0 = time.perf_counter()
            detector.fpo_detect(z_tilde, n_samples=args.samples, burn_in=args.burn_in, backend=b)
            print(f"  {b:7s} {time.perf_counter() - t0:9.2f} s")


if __name__ == "__main__":
    main()
