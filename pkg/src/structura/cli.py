"""Command-line front end.

    structura solve instance.json [-o out.json]
    structura gradcheck instance.json [--h 1e-4] [--seed 0] [--trials 10]
    structura loss instance.json gold.json [-o out.json]

Exit codes: 0 success, 1 input error (or failed gradient check), 2 the
forward solve stopped at the iteration cap.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .activeset import SparseMapConfig
from .admm import AdmmConfig, SolveError, solve
from .backward import BackwardConfig, jvp
from .graph import GraphError
from .instance import InstanceError, load_gold, load_instance
from .loss import evaluate_loss

EXIT_OK, EXIT_INPUT, EXIT_MAX_ITER = 0, 1, 2
GRADCHECK_THRESHOLD = 1e-3
# derivatives below FLOOR * |d| * |v| count as zero; the Jacobian has norm
# at most one, so this is relative to the largest possible value
GRADCHECK_FLOOR = 1e-6
MAX_RESAMPLES = 20


def format_number(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x) + 0.0  # folds -0.0 so output round-trips
    if not np.isfinite(x):
        return "null"
    return "%.17g" % x


def _encode(obj) -> str:
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    if isinstance(obj, str):
        return json.dumps(obj)
    if obj is None:
        return "null"
    return format_number(obj)


def dumps(report: dict) -> str:
    """One top-level key per line, numbers with 17 significant digits."""
    lines = [f"  {json.dumps(k)}: {_encode(v)}" for k, v in report.items()]
    return "{\n" + ",\n".join(lines) + "\n}\n"


def _emit(report: dict, path):
    text = dumps(report)
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def config_from_args(args) -> AdmmConfig:
    return AdmmConfig(
        gamma=args.gamma,
        max_outer=args.max_iter,
        eps_primal=args.eps_primal,
        eps_dual=args.eps_dual,
        inner=SparseMapConfig(max_iterations=args.max_inner_iter),
        backward_power_iterations=args.backward_iter,
        force_generic=args.force_generic,
    )


def cmd_solve(args) -> int:
    inst = load_instance(args.instance)
    sol = solve(inst.graph, inst.eta, inst.eta_n, config_from_args(args))
    _emit({
        "mu": sol.mu,
        "status": sol.status,
        "iterations": sol.iterations,
        "primal_residual": sol.residual_primal,
        "dual_residual": sol.residual_dual,
    }, args.output)
    return EXIT_OK if sol.converged else EXIT_MAX_ITER


def relative_error(a: float, b: float, scale: float = 1.0) -> float:
    return abs(a - b) / max(abs(a), abs(b), GRADCHECK_FLOOR * scale)


def cmd_gradcheck(args) -> int:
    inst = load_instance(args.instance)
    cfg = config_from_args(args)
    if args.trials < 0 or not args.h > 0:
        raise InstanceError("--trials must be >= 0 and --h positive")
    if args.trials == 0:
        print("no trials requested")
        return EXIT_OK
    base = solve(inst.graph, inst.eta, inst.eta_n, cfg)
    if not base.converged:
        print(f"forward solve hit max_iter after {base.iterations} iterations; "
              "gradients are undefined off the solution", file=sys.stderr)
        return EXIT_MAX_ITER
    bcfg = BackwardConfig(max_iterations=cfg.backward_power_iterations)
    rng = np.random.default_rng(args.seed)
    h, n = args.h, inst.graph.num_variables
    worst, resampled, checked = 0.0, 0, 0
    for trial in range(args.trials):
        for _ in range(MAX_RESAMPLES):
            v = rng.standard_normal(n)
            vn = [rng.standard_normal(len(e)) for e in inst.eta_n]
            d = rng.standard_normal(n)
            plus = solve(inst.graph, inst.eta + h * v, [e + h * w for e, w in zip(inst.eta_n, vn)], cfg)
            minus = solve(inst.graph, inst.eta - h * v, [e - h * w for e, w in zip(inst.eta_n, vn)], cfg)
            if (plus.converged and minus.converged
                    and plus.signature == base.signature == minus.signature):
                break
            resampled += 1
        else:
            print(f"trial {trial}: no support-stable direction found")
            continue
        back = jvp(base, d, bcfg)
        analytic = float(back.d_m @ v) + sum(float(a @ w) for a, w in zip(back.d_n, vn))
        numeric = float(d @ (plus.mu - minus.mu)) / (2 * h)
        scale = np.linalg.norm(d) * np.sqrt(v @ v + sum(w @ w for w in vn))
        err = relative_error(analytic, numeric, scale)
        worst = max(worst, err)
        checked += 1
        print(f"trial {trial}: analytic {format_number(analytic)} numeric {format_number(numeric)} "
              f"relative error {err:.3e}")
    ok = checked == args.trials and worst <= GRADCHECK_THRESHOLD
    print(f"{'PASS' if ok else 'FAIL'}: max relative error {worst:.3e} over {checked} trials "
          f"(threshold {GRADCHECK_THRESHOLD:g}), {resampled} resampled")
    return EXIT_OK if ok else EXIT_INPUT


def cmd_loss(args) -> int:
    inst = load_instance(args.instance)
    gold = load_gold(args.gold, inst.graph)
    res = evaluate_loss(inst.graph, inst.eta, gold, inst.eta_n, config_from_args(args))
    report = {
        "loss": res.value,
        "grad_eta": res.grad_eta_m,
        "grad_eta_add": [list(g) for g in res.grad_eta_n],
        "status": res.solution.status,
    }
    if args.output is None:
        _emit(report, None)
    else:
        _emit(report, args.output)
        print(f"loss {format_number(res.value)}")
    return EXIT_OK if res.exact else EXIT_MAX_ITER


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors, not the max_iter code argparse would use
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("instance", help="instance JSON file")
    common.add_argument("--gamma", type=float, default=0.1)
    common.add_argument("--max-iter", type=int, default=1000)
    common.add_argument("--max-inner-iter", type=int, default=10)
    common.add_argument("--eps-primal", type=float, default=1e-6)
    common.add_argument("--eps-dual", type=float, default=1e-6)
    common.add_argument("--backward-iter", type=int, default=100)
    common.add_argument("--force-generic", action="store_true",
                        help="solve closed-form factors with the active-set method")

    parser = _Parser(prog="structura", description="LP-SparseMAP inference")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve and write mu")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("gradcheck", parents=[common], help="compare the backward pass to finite differences")
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=10)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("loss", parents=[common], help="evaluate the Fenchel-Young loss")
    p.add_argument("gold", help="gold JSON file")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_loss)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InstanceError, GraphError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolveError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
