"""Print flow-collision probabilities and window-collision rates for a trace.

    python3 scripts/collision_tables.py [trace.csv]

Without a trace, only the port-reuse table is printed.
"""

import sys

from ttlscope.distributions import build, collision_exact, collision_window, flow_collision
from ttlscope.records import read_records
from ttlscope.state import build_table


def main() -> None:
    print("flows  P(port reuse)")
    for n in (10, 50, 100, 200, 500, 1000, 2000):
        print(f"{n:5d}  {flow_collision(n):.6f}")
    if len(sys.argv) < 2:
        return
    with open(sys.argv[1]) as fh:
        table = build_table(read_records(fh))
    for domain in ("ttl", "hop_count"):
        for counting in ("per_ip", "per_packet"):
            d = build(table, domain, counting)
            row = "  ".join(f"n={n}: {collision_exact(d, n):.4f}/{collision_window(d, n):.4f}" for n in range(4))
            print(f"{domain:9s} {counting:10s} exact/window  {row}")


if __name__ == "__main__":
    main()
