"""Compare vanilla and optimized convolution placement on this host.

Runs a small bench sweep and prints the markdown table. On a host with fewer
cores than UEs every worker shares the same cores, so optimized mode has no
parallelism to exploit and the two modes end up close.

    python3 demos/mode_comparison.py --ues 5 --taps 10,50,100 --duration 5
"""
import argparse

from tinytwin.bench import BenchMatrix, render_report, run_bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ues", type=int, default=5)
    ap.add_argument("--taps", default="10,50,100")
    ap.add_argument("--duration", type=float, default=5.0, help="seconds per cell")
    args = ap.parse_args()

    matrix = BenchMatrix(modes=("vanilla", "optimized"), ues=(args.ues,),
                         taps=tuple(int(t) for t in args.taps.split(",")), duration=args.duration, echo_probes=50)
    reports = run_bench(matrix, progress=lambda r: print(f"  done: {r.mode} {r.num_taps} taps", flush=True))
    print()
    print(render_report(reports, "markdown"))


if __name__ == "__main__":
    main()
