"""Cost-term ablation on the composite synthetic scenario, averaged over seeds."""
import argparse

import numpy as np

from egotrack import io, metrics, synth
from egotrack.cli import DEFAULT_GRID, format_table
from egotrack.costs import CostConfig


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=10)
    args = p.parse_args()

    scenes = [synth.generate(synth.ablation_scenario_spec(s)) for s in range(args.seeds)]
    rows = []
    for row in DEFAULT_GRID:
        cfg = CostConfig.from_dict({**CostConfig().to_dict(), **row.get("config", {})}).without(*row.get("disable", []))
        reps = [metrics.evaluate_video(io.refine_scenario(scn, cfg)[1]) for scn in scenes]
        rows.append(
            [row["name"]]
            + [f"{np.mean([getattr(r, k) for r in reps]):.3f}" for k in ("hota", "det_a", "ass_a", "idf1")]
            + [str(sum(sum(r.id_switches.values()) for r in reps))]
        )
    print(f"mean over {args.seeds} seeds")
    print(format_table(["config", "HOTA", "DetA", "AssA", "IDF1", "IDSW"], rows))


if __name__ == "__main__":
    main()
