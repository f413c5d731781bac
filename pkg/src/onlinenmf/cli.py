"""Command-line interface.

Subcommands: ``simulate``, ``fit-batch``, ``fit-online``, ``evaluate`` and
``trace-export``.  Every subcommand accepts ``--config FILE`` with flat
``key = value`` lines whose keys are flag names (dashes or underscores);
flags given on the command line win over the file.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import logging
import sys
from pathlib import Path

from . import dataio, exact, smc
from .engine import OnlineConfig, run_batch, run_online
from .evaluate import align_columns, psi_error
from .model import DegenerateIntensityError, DomainError
from .params import ThetaParams
from .processes import make_process
from .simulate import random_basis

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULT_PSI = {"basis": (0.8571, 0.6926), "relaxed": (0.95,)}

log = logging.getLogger("onlinenmf")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _bool(text):
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _optional_float(text):
    return None if str(text).strip().lower() in ("none", "") else float(text)


class _Command:
    """A subparser plus the built-in defaults that config files may override."""

    def __init__(self, subparsers, name, help, func):
        self.parser = subparsers.add_parser(name, help=help, argument_default=argparse.SUPPRESS)
        self.parser.set_defaults(func=func)
        self.defaults = {}
        self.required = []
        self.add("--config", metavar="FILE", help="flat key = value file of flag defaults")

    def add(self, *flags, default=None, required=False, **kw):
        # required flags are checked after merging so a config file can supply them
        action = self.parser.add_argument(*flags, **kw)
        if action.dest != "config":
            self.defaults[action.dest] = default
        if required:
            self.required.append(action)
        return action

    def resolve(self, ns):
        """Merge built-in defaults, the config file and explicit flags (in that order)."""
        values = dict(self.defaults)
        config = getattr(ns, "config", None)
        if config is not None:
            try:
                kv = dataio.parse_key_values(config)
            except FileNotFoundError:
                raise UsageError(f"config file not found: {config}") from None
            actions = {a.dest: a for a in self.parser._actions}
            for key, raw in kv.items():
                dest = key.replace("-", "_")
                action = actions.get(dest)
                if action is None or dest in ("config", "func", "help"):
                    raise UsageError(f"unknown config key {key!r} for {self.parser.prog}")
                conv = action.type or (_bool if action.nargs == 0 else str)
                try:
                    val = conv(raw)
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    raise UsageError(f"config key {key!r}: {exc}") from None
                if action.choices is not None and val not in action.choices:
                    raise UsageError(f"config key {key!r}: {val!r} not in {sorted(action.choices)}")
                values[dest] = val
        values.update(vars(ns))
        missing = [a.option_strings[0] for a in self.required if values.get(a.dest) is None]
        if missing:
            raise UsageError(f"{self.parser.prog}: missing required {', '.join(missing)}")
        return argparse.Namespace(**values)


def build_parser():
    parser = _Parser(prog="onlinenmf", description="Poisson NMF as a hidden Markov model: "
                     "simulation, batch EM and online EM (exact or particle).")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    commands = {}

    c = commands["simulate"] = _Command(sub, "simulate", "simulate a dataset", cmd_simulate)
    c.add("--model", choices=("basis", "relaxed"), default="basis")
    c.add("--m", type=int, default=8, help="observation dimension")
    c.add("--k", type=int, default=5, help="number of latent sources")
    c.add("--t", type=int, default=1000, help="number of time steps")
    c.add("--seed", type=int, default=0)
    c.add("--p", type=float, default=None, help="basis model P(0 -> 0)")
    c.add("--q", type=float, default=None, help="basis model P(1 -> 1)")
    c.add("--alpha", type=float, default=None, help="relaxed model parameter")
    c.add("--b-low", type=float, default=0.5, help="lower bound of true B entries")
    c.add("--b-high", type=float, default=5.0, help="upper bound of true B entries")
    c.add("--dump-latent", action="store_true", default=False)
    c.add("--out", required=True, help="output directory")

    for name, func, help in (("fit-batch", cmd_fit_batch, "batch EM on a finite model"),
                             ("fit-online", cmd_fit_online, "single-pass online EM")):
        c = commands[name] = _Command(sub, name, help, func)
        c.add("--data", required=True, help="dataset directory, manifest or observation file")
        c.add("--model", choices=("basis", "relaxed"), default=None,
              help="model when --data has no manifest")
        c.add("--k", type=int, default=None, help="latent dimension when --data has no manifest")
        c.add("--seed", type=int, default=0)
        c.add("--estimate", choices=("B", "psi", "both"), default="both")
        c.add("--out", required=True, help="output directory")
        if name == "fit-batch":
            c.add("--iters", type=int, default=25)
            c.add("--tol", type=float, default=0.0)
        else:
            c.add("--engine", choices=("exact", "smc"), default="exact")
            c.add("--particles", type=int, default=1000)
            c.add("--step-exponent", type=float, default=0.8)
            c.add("--burn-in", type=int, default=100)
            c.add("--trace-every", type=int, default=100)
            c.add("--ess-threshold", type=_optional_float, default=None,
                  help="resample only when ESS < threshold * N (default: every step)")

    c = commands["evaluate"] = _Command(sub, "evaluate", "aligned error against the truth",
                                        cmd_evaluate)
    c.add("--data", required=True, help="dataset directory or manifest")
    c.add("--estimate-file", required=True, help="trace CSV; its last entry is evaluated")
    c.add("--out", default=None, help="optional report file")

    c = commands["trace-export"] = _Command(sub, "trace-export",
                                            "per-entry B trajectory CSV", cmd_trace_export)
    c.add("--trace", required=True, help="trace CSV written by a fit command")
    c.add("--data", default=None, help="align columns to this dataset's truth")
    c.add("--out", required=True, help="output CSV path")

    parser.commands = commands
    return parser


# ----------------------------------------------------------------- commands

def cmd_simulate(args):
    if args.m < 1 or args.k < 1 or args.t < 0:
        raise UsageError("--m and --k must be positive and --t nonnegative")
    given = {"basis": (args.p, args.q), "relaxed": (args.alpha,)}[args.model]
    psi_vals = [d if v is None else v for v, d in zip(given, DEFAULT_PSI[args.model])]
    try:
        psi = make_process(args.model, args.k).make_params(psi_vals)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not 0 <= args.b_low < args.b_high:
        raise UsageError("need 0 <= --b-low < --b-high")
    truth_rng, _ = dataio.dataset_streams(args.seed)
    B = random_basis(args.m, args.k, truth_rng, args.b_low, args.b_high)
    manifest = dataio.simulate_dataset(args.model, ThetaParams(B, psi), args.t, args.seed,
                                       args.out, dump_latent=args.dump_latent)
    print(f"wrote {manifest.T} observations to {manifest.observations_path}")
    return EXIT_OK


def _dataset(args):
    """``(manifest or None, observation path, process)`` for a fit command."""
    path = Path(args.data)
    manifest = None
    if path.is_dir() or path.name == dataio.MANIFEST_NAME:
        manifest = dataio.DatasetManifest.read(path)
        manifest.verify()
        obs = manifest.observations_path
        model, K = manifest.model, manifest.K
    else:
        obs = path
        model, K = args.model, args.k
        if model is None or K is None:
            raise UsageError("--model and --k are required when --data is an observation file")
    if not Path(obs).exists():
        raise FileNotFoundError(obs)
    return manifest, obs, make_process(model, K)


def _frozen_parts(args, manifest):
    est_B = args.estimate in ("B", "both")
    est_psi = args.estimate in ("psi", "both")
    if (not est_B or not est_psi) and manifest is None:
        raise UsageError("--estimate B or psi needs a dataset manifest for the fixed part")
    B_init = None if est_B else manifest.true_theta.B
    psi_init = None if est_psi else manifest.true_theta.psi
    return est_B, est_psi, B_init, psi_init


def _write_outputs(out, trace):
    out = dataio.ensure_dir(out)
    dataio.write_trace(out / "trace.csv", trace)
    final = trace.final.theta
    lines = ["B = " + ",".join(dataio._fmt(v) for v in final.B.ravel()),
             "psi = " + ",".join(dataio._fmt(v) for v in final.psi.as_tuple()),
             f"t = {trace.final.t}"]
    (out / "estimate.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(trace)} trace entries to {out / 'trace.csv'}")


def cmd_fit_batch(args):
    manifest, obs, process = _dataset(args)
    if not process.finite:
        raise UsageError("fit-batch needs the finite basis model")
    est_B, est_psi, B_init, psi_init = _frozen_parts(args, manifest)
    Y = dataio.read_observations(obs, M=manifest.M if manifest else None)
    if Y.shape[0] == 0:
        raise dataio.DataFormatError("no observations", obs)
    trace = run_batch(Y, process, iters=args.iters, tol=args.tol, seed=args.seed,
                      B_init=B_init, psi_init=psi_init, estimate_B=est_B, estimate_psi=est_psi)
    _write_outputs(args.out, trace)
    return EXIT_OK


def cmd_fit_online(args):
    manifest, obs, process = _dataset(args)
    if args.engine == "exact" and not process.finite:
        raise UsageError("the exact engine needs the finite basis model; use --engine smc")
    est_B, est_psi, B_init, psi_init = _frozen_parts(args, manifest)
    try:
        config = OnlineConfig(engine=args.engine, step_exponent=args.step_exponent,
                              burn_in=args.burn_in, n_particles=args.particles, seed=args.seed,
                              estimate_B=est_B, estimate_psi=est_psi,
                              trace_every=args.trace_every, ess_threshold=args.ess_threshold)
        config.schedule  # validates the exponent
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    stream = dataio.load_observations(obs, M=manifest.M if manifest else None)
    trace = run_online(stream, process, config, B_init=B_init, psi_init=psi_init)
    _write_outputs(args.out, trace)
    return EXIT_OK


def cmd_evaluate(args):
    manifest = dataio.DatasetManifest.read(args.data)
    est = dataio.read_trace(args.estimate_file).final.theta
    truth = manifest.true_theta
    if est.B.shape != truth.B.shape:
        raise dataio.DataFormatError(f"estimate shape {est.B.shape} does not match "
                                     f"truth {truth.B.shape}", args.estimate_file)
    report = align_columns(est.B, truth.B)
    fields = report.as_dict()
    if type(est.psi) is type(truth.psi):
        for name, err in zip(dataio._psi_names(truth.psi), psi_error(est.psi, truth.psi)):
            fields[f"abs_error_{name}"] = float(err)
    text = "".join(f"{k} = {v if isinstance(v, str) else dataio._fmt(v)}\n"
                   for k, v in fields.items())
    sys.stdout.write(text)
    if args.out is not None:
        Path(args.out).write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_trace_export(args):
    trace = dataio.read_trace(args.trace)
    if args.data is not None:
        truth = dataio.DatasetManifest.read(args.data).true_theta
        perm = align_columns(trace.final.theta.B, truth.B).permutation
        aligned = dataio.EstimateTrace()
        for e in trace:
            aligned.append(e.t, e.theta.replace(B=e.theta.B[:, perm]), loglik=e.loglik)
        trace = aligned
    dataio.write_trace(args.out, trace)
    print(f"wrote {len(trace)} rows to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------- entry

def main(argv=None):
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        args = parser.commands[ns.command].resolve(ns)
        return args.func(args)
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (UsageError, exact.NotEnumerableError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, DegenerateIntensityError, smc.ParticleCollapseError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (dataio.DataFormatError, DomainError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
