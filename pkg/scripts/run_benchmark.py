"""Run an experiment spec end to end: synthetic data, report, summary.

    python scripts/run_benchmark.py scripts/configs/quick.cfg -o runs/quick
"""
import argparse
import sys

from fewshot_ser.cli import main as cli


def main():
    p = argparse.ArgumentParser()
    p.add_argument("spec")
    p.add_argument("-o", "--output", required=True)
    args = p.parse_args()
    for argv in (["run", args.spec, "-o", args.output], ["report", args.output]):
        code = cli(["-v"] + argv)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
