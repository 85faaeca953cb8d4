"""Refine every occlusion-suite seed with and without the location term and report identity errors."""
import argparse
import time

from egotrack import io, metrics, synth
from egotrack.costs import CostConfig


def reentries(scn) -> dict:
    ids: dict = {}
    for g, o in zip(scn.gt, scn.observations):
        ids.setdefault(g["gt_track_id"], set()).add(o["initial_instance"])
    return {k: len(v) - 1 for k, v in ids.items()}


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=50)
    p.add_argument("--first-seed", type=int, default=0)
    args = p.parse_args()

    configs = {"full": CostConfig(), "no location": CostConfig().without("location")}
    print(f"{'seed':>4} {'objects':>7} {'re-entries':>10} " + " ".join(f"{k + ' switches':>20}" for k in configs))
    totals = dict.fromkeys(configs, 0)
    t0 = time.perf_counter()
    for seed in range(args.first_seed, args.first_seed + args.seeds):
        scn = synth.generate(synth.occlusion_suite_spec(seed))
        back = reentries(scn)
        cells = []
        for name, cfg in configs.items():
            switches, _ = metrics.switches_per_track(io.refine_scenario(scn, cfg)[1])
            n = sum(switches.values())
            totals[name] += n
            cells.append(f"{n:>20}")
        print(f"{seed:>4} {len(back):>7} {sum(back.values()):>10} " + " ".join(cells))
    print("total switches: " + ", ".join(f"{k} {v}" for k, v in totals.items()) + f" ({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
