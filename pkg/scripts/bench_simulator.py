"""Wall-clock cost of the simulator for the batch sizes the pipeline uses."""

import argparse
import time

import numpy as np

from spmet_gsa.defaults import UNCERTAIN_PARAMETERS, kokam_parameters
from spmet_gsa.sensitivity import ParameterDistribution, SpmetOutputModel, pem_samples
from spmet_gsa.simulator import CurrentProfile


def timed(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--P", type=int, default=10)
    args = ap.parse_args()

    params = kokam_parameters(args.P)
    model = SpmetOutputModel(params, UNCERTAIN_PARAMETERS)
    dist = ParameterDistribution.from_params(params, UNCERTAIN_PARAMETERS)
    nodes = pem_samples(dist).nodes
    fd = np.ones((19, 9))
    profiles = {
        "rest": CurrentProfile((0.0,) * 10, 100.0),
        "charge 5C": CurrentProfile((-5.0,) * 10, 100.0),
        "mixed": CurrentProfile((-10.0, 5.0, -12.0, 0.0, 6.0, -8.0, 2.0, -5.0, 7.0, 0.0), 100.0),
    }
    model.run(profiles["rest"], fd[:1])  # compile
    print(f"{'profile':<12}{'single (s)':>12}{'FD batch 19 (s)':>18}{'PEM batch 163 (s)':>20}")
    for name, prof in profiles.items():
        t1 = timed(lambda: model.run(prof, fd[:1]), args.repeat)
        t2 = timed(lambda: model.run(prof, fd, control=[0]), args.repeat)
        t3 = timed(lambda: model.run(prof, nodes, control=[0]), args.repeat)
        print(f"{name:<12}{t1:>12.4f}{t2:>18.4f}{t3:>20.4f}")


if __name__ == "__main__":
    main()
