"""Command-line entry point: ``scsparc {se,vpa,curves,simulate}``."""

from __future__ import annotations

import argparse
import sys

from .exceptions import ConfigError
from .harness import EXIT_CONFIG, ExperimentConfig, load_config_file, run


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the configuration-error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--omega", type=int)
    p.add_argument("--lambda", dest="lam", type=int, help="coupling length Lambda")
    p.add_argument("--sigma2", type=float, help="noise variance (default 1)")
    p.add_argument("--rate", type=float)
    p.add_argument("--rate-unit", dest="rate_unit", choices=("nats", "bits"))
    p.add_argument("--power", type=float)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output path (default stdout)")


def _allocation(p: argparse.ArgumentParser, choices) -> None:
    p.add_argument("--allocation", choices=choices)
    p.add_argument("--delta", type=float, help="VPA margin added to every root")
    p.add_argument("--profile", help="column-profile JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scsparc", description="Spatially coupled SPARC tools")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("se", help="asymptotic state evolution trajectory")
    _shared(p)
    _allocation(p, ("upa", "vpa", "profile"))
    p.add_argument("--max-iter", dest="max_iter", type=int)

    p = sub.add_parser("vpa", help="run the V-power allocation")
    _shared(p)
    p.add_argument("--delta", type=float, help="margin added to every root")

    p = sub.add_parser("curves", help="rate-power / power-rate sweeps")
    _shared(p)
    p.add_argument("--sweep", choices=("rate", "power"))
    p.add_argument("--grid", type=float, nargs="+", help="explicit grid points")
    p.add_argument("--oracle", action="store_true", default=None,
                   help="add an SE-bisection cross-check column")

    p = sub.add_parser("simulate", help="Monte-Carlo block error rate")
    _shared(p)
    _allocation(p, ("upa", "vpa", "profile", "reference"))
    p.add_argument("--M", dest="m", type=int, help="section size")
    p.add_argument("--L", dest="l", type=int, help="number of sections")
    p.add_argument("--Lc", dest="l_c", type=int, help="column blocks (must equal lambda)")
    p.add_argument("--Mr", dest="m_r", type=int, help="rows per row block")
    p.add_argument("--snr", dest="snr_db", type=float, action="append", help="SNR in dB (repeatable)")
    p.add_argument("--trials", type=int)
    p.add_argument("--design", choices=("gaussian", "hadamard"))
    p.add_argument("--amp-iter", dest="amp_iter", type=int, help="AMP iteration cap")
    p.add_argument("--psi-mode", dest="psi_mode", choices=("online", "se"))
    p.add_argument("--per-iteration", dest="per_iteration", action="store_true", default=None,
                   help="also write per-iteration BLER to <out>_iterations.csv")
    p.add_argument("--workers", type=int)
    p.add_argument("--timing", action="store_true", default=None,
                   help="record wall time (makes output non-reproducible)")
    return parser


def main(argv=None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    try:
        file_doc = load_config_file(args["config"]) if args.get("config") else {}
        file_doc.pop("command", None)
        cfg = ExperimentConfig.from_sources(file_doc, dict(args, command=command))
        return run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
