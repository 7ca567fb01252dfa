"""Generate a flood scenario, run detection, and compare against ground truth.

    python3 scripts/attack_experiment.py [scripts/attack.json] [--control]
"""

import argparse
import json
import time

from ttlscope.anomaly import detect, detection_json
from ttlscope.state import build_table
from ttlscope.synth import ScenarioSpec, generate


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("spec", nargs="?", default="scripts/attack.json")
    ap.add_argument("--control", action="store_true", help="drop the attack and report false positives")
    args = ap.parse_args()

    spec = ScenarioSpec.from_json(open(args.spec).read())
    if args.control:
        spec.attack = None
    t0 = time.perf_counter()
    records, truth = generate(spec)
    table = build_table(records, epoch_us=spec.epoch_us)
    results = detect(table)
    elapsed = time.perf_counter() - t0

    print(f"records={len(records)} ips={len(table)} elapsed={elapsed:.1f}s")
    print(f"ground truth attack bins: {truth.attack_bins}")
    print(json.dumps(detection_json(results, {"spec": args.spec, "control": args.control}), indent=2))


if __name__ == "__main__":
    main()
