"""``ladder-eit`` command line: run, sweep, fit and validate scenario files.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 file or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

import yaml

from . import __version__
from .constants import ENV_VAR, ConstantsError, load_constants, payload_checksum
from .doppler import ConvergenceError
from .fitting import DataFormatError, FitError, load_measured
from .model import ModelError
from .runner import run_scenario
from .scenario import ScenarioError, bundled_scenarios, load_scenario, resolve_path

EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 2, 3, 4

log = logging.getLogger("ladder_eit")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ladder-eit",
        description="Doppler-averaged ladder EIT spectra, transparency windows and fits.",
        epilog=f"Set {ENV_VAR} to use a different atomic constants file.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("scenario", help="scenario YAML file or bundled name (fig2, fig3, ...)")
    common.add_argument("--out", type=Path, default=None,
                        help="output directory (default: out/<scenario name>)")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--seed", type=int, default=0, help="seed for synthetic fit data")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--plot", action="store_true", help="also write SVG plots")

    sub.add_parser("run", parents=[common], help="produce every output the scenario requests")
    sub.add_parser("sweep", parents=[common], help="only the width-versus-ratio sweep")
    f = sub.add_parser("fit", parents=[common], help="fit the model to measured data")
    f.add_argument("data", help="CSV/TSV spectrum, or 'synthetic' for seeded synthetic data")
    f.add_argument("--direction", choices=("counter", "co"), default=None,
                   help="beam geometry of the data (overrides the file metadata)")
    v = sub.add_parser("validate", help="parse and check a scenario without running it")
    v.add_argument("scenario")
    v.add_argument("--dump", action="store_true", help="print the canonical form")

    c = sub.add_parser("constants", help="inspect or re-hash an atomic constants file")
    c.add_argument("--rehash", type=Path, metavar="FILE",
                   help="rewrite the checksum entry of FILE after editing it")
    sub.add_parser("list", help="list bundled scenarios")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return _dispatch(args)
    except (ScenarioError, ConstantsError, FitError, ModelError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DataFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def _dispatch(args) -> int:
    if args.verb == "list":
        for name, path in sorted(bundled_scenarios().items()):
            print(f"{name}\t{path}")
        return 0
    if args.verb == "constants":
        return _constants(args)

    sc = load_scenario(resolve_path(args.scenario))
    if args.verb == "validate":
        print(sc.dump() if args.dump else f"{sc.name}: ok ({', '.join(sc.outputs)})")
        return 0
    if args.threads < 1:
        raise ScenarioError("must be >= 1", "--threads")

    outputs, data = None, None
    if args.verb == "sweep":
        if sc.sweep is None:
            raise ScenarioError("scenario has no sweep section", "sweep")
        outputs = ("sweep",)
    elif args.verb == "fit":
        if sc.fit is None:
            raise ScenarioError("scenario has no fit section", "fit")
        outputs = ("fit",)
        if args.data != "synthetic":
            data = load_measured(args.data, sc.gamma2, args.direction)
    out = args.out or Path("out") / sc.name
    summary = run_scenario(sc, out, outputs, threads=args.threads, fmt=args.format,
                           seed=args.seed, data=data, plot=args.plot)
    for name in summary["files"]:
        print(out / name)
    if "fit" in summary:
        r = summary["fit"]
        print(json.dumps({"converged": r["converged"], "rms": r["rms"],
                          "params_Gamma2": r["params_Gamma2"]}, indent=1))
    return 0


def _constants(args) -> int:
    if args.rehash is None:
        data = load_constants()
        print(f"{data.path}: {data.checksum}")
        return 0
    path: Path = args.rehash
    text = path.read_text(encoding="utf-8")
    raw = yaml.safe_load(text)
    if not isinstance(raw, dict):
        raise ConstantsError(f"{path}: top level must be a mapping")
    line = f'checksum: "{payload_checksum(raw)}"'
    if re.search(r"^checksum:.*$", text, flags=re.M):
        text = re.sub(r"^checksum:.*$", line, text, flags=re.M)
    else:
        text = text.rstrip("\n") + "\n" + line + "\n"
    path.write_text(text, encoding="utf-8")
    print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
