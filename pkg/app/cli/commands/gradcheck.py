from loguru import logger

from app.network.certification import MODULES, POINTS, certify


def register(subparsers) -> None:
    parser = subparsers.add_parser("gradcheck", help="Certify analytic gradients against finite differences")
    parser.add_argument("--module", choices=MODULES, default="all")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--points", type=int, default=POINTS, help="random points per case")
    parser.set_defaults(handler=run)


def run(args) -> int:
    reports = certify(args.module, seed=args.seed, points=args.points)
    for report in reports:
        status = "ok" if report.passed else "FAIL"
        logger.info(f"{status:4} {report.op}: rel {report.max_rel_error:.2e}, abs {report.max_abs_error:.2e}")
    return 0 if all(report.passed for report in reports) else 2
