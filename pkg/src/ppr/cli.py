"""Command-line interface.

Exit codes: 0 success, 1 user error, 2 internal error. Errors are printed
to stderr as JSON ``{"error": {"type": ..., "message": ...}}``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import privacy
from .codec import CodecError, elias_delta_length, pack_container, unpack_container
from .core import (
    DEFAULT_MAX_POINTS,
    EncodeError,
    PprParams,
    decode,
    encode,
    encode_truncated,
    log_k_bound,
    refined_overhead,
    simple_overhead,
)
from .experiments import (
    DmeConfig,
    LaplaceExpConfig,
    TimingConfig,
    config_metadata,
    run_dme,
    run_laplace_experiment,
    run_timing,
    write_csv,
)
from .mechanisms import (
    CapMechSpec,
    GaussianMechSpec,
    GaussianProposalSpec,
    LaplaceMechSpec,
    SlicedConfig,
    cap_target,
    gaussian_chunk_factory,
    gaussian_target,
    laplace_proposal_variance,
    laplace_target,
    proposal_from_dict,
    sliced_decode,
    sliced_encode,
)
from .rng import SampleStream, SharedSeed


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(f"{self.prog}: {message}")


def _emit(obj):
    print(json.dumps(obj, sort_keys=True, default=_json_default))


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _load_json_arg(text: str, what: str):
    """Inline JSON, or ``@path`` to read it from a file."""
    try:
        if text.startswith("@"):
            with open(text[1:]) as fh:
                return json.load(fh)
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UserError(f"{what} is not valid JSON: {exc}") from None


def _read_vector(path: str) -> np.ndarray:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UserError(f"{path}: not a JSON array: {exc}") from None
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise UserError(f"{path}: expected a non-empty flat JSON array of numbers")
    return arr


def _seeds(args):
    try:
        shared = SharedSeed.parse(args.seed)
        local = SharedSeed.parse(args.local_seed) if getattr(args, "local_seed", None) else shared.derive("local")
    except ValueError as exc:
        raise UserError(str(exc)) from None
    return shared, local


def _need(params: dict, *names):
    missing = [n for n in names if n not in params]
    if missing:
        raise UserError(f"--params is missing {', '.join(missing)}")


# encode / decode -----------------------------------------------------------

def cmd_encode(args) -> int:
    params = _load_json_arg(args.params, "--params")
    if not isinstance(params, dict):
        raise UserError("--params must be a JSON object")
    x = _read_vector(args.infile)
    d = x.size
    shared, local_seed = _seeds(args)
    local = SampleStream(local_seed)
    pp = PprParams(args.alpha, max_points=params.get("max_points", DEFAULT_MAX_POINTS))
    meta = {}

    if args.mechanism == "gaussian":
        _need(params, "noise_variance", "proposal_variance")
        sp, sq = float(params["noise_variance"]), float(params["proposal_variance"])
        tail = params.get("tail_mass")
        chunk = params.get("chunk_dim")
        if chunk is not None:
            sc = SlicedConfig(int(chunk), d)
            results = sliced_encode(x, gaussian_chunk_factory(sp, sq, tail), sc, pp, shared, local)
        else:
            prop = GaussianProposalSpec(sq, d)
            results = [encode(pp, prop.proposal(), gaussian_target(GaussianMechSpec(x, sp), prop, tail), shared, local)]
        proposal = {"type": "gaussian", "dimension": d, "variance": sq}
        if chunk is not None:
            proposal["chunk_dim"] = int(chunk)
    elif args.mechanism == "laplace":
        _need(params, "epsilon", "C")
        eps, C = float(params["epsilon"]), float(params["C"])
        prop = GaussianProposalSpec(laplace_proposal_variance(C, d, eps), d)
        target = laplace_target(LaplaceMechSpec(x, eps, C), prop)
        n_points = int(params.get("n_points", target.metadata["n_points"]))
        results = [encode_truncated(pp, prop.proposal(), target, shared, local, n_points)]
        proposal = {"type": "gaussian", "dimension": d, "variance": prop.variance}
        meta = {"truncated": True, "n_points": n_points}
    else:
        _need(params, "cap_threshold", "inside_prob", "sphere_radius")
        spec = CapMechSpec(x, float(params["cap_threshold"]), float(params["inside_prob"]),
                           float(params["sphere_radius"]))
        prop, target = cap_target(spec)
        results = [encode(pp, prop, target, shared, local)]
        proposal = dict(prop.description)

    ks = [r.k for r in results]
    blob = pack_container(ks)
    with open(args.out, "wb") as fh:
        fh.write(blob)
    _emit({
        "k": ks if len(ks) > 1 else ks[0],
        "bits": sum(elias_delta_length(k) for k in ks),
        "container_bytes": len(blob),
        "winning_log_weight": [r.winning_log_weight for r in results] if len(ks) > 1 else results[0].winning_log_weight,
        "points_examined": sum(r.points_examined for r in results),
        "bound_violations": sum(r.bound_violations for r in results),
        "proposal": proposal,
        **meta,
    })
    return 0


def cmd_decode(args) -> int:
    desc = _load_json_arg(args.mechanism_proposal, "--mechanism-proposal")
    if not isinstance(desc, dict):
        raise UserError("--mechanism-proposal must be a JSON object")
    shared, _ = _seeds(args)
    with open(args.infile, "rb") as fh:
        ks = unpack_container(fh.read())
    chunk = desc.get("chunk_dim")
    base = {k: v for k, v in desc.items() if k != "chunk_dim"}
    if chunk is not None:
        d = int(base["dimension"])
        sc = SlicedConfig(int(chunk), d)
        z = sliced_decode(ks, lambda m: proposal_from_dict({**base, "dimension": m}), sc, shared)
    else:
        if len(ks) != 1:
            raise UserError(f"container holds {len(ks)} indices; a single-block proposal needs 1")
        proposal = proposal_from_dict(base)
        z = decode(proposal, ks[0], shared)
    with open(args.out, "w") as fh:
        json.dump([float(v) for v in z], fh)
        fh.write("\n")
    _emit({"k": ks if len(ks) > 1 else ks[0], "dimension": int(z.size)})
    return 0


# experiments ----------------------------------------------------------------

def _config(cls, args, full_scale: bool):
    data = _load_json_arg("@" + args.config, "--config") if args.config else {}
    if not isinstance(data, dict):
        raise UserError("--config must hold a JSON object")
    for name in ("trials", "seed"):
        if getattr(args, name, None) is not None:
            data[name] = getattr(args, name)
    if getattr(args, "no_timing", False):
        data["record_timing"] = False
    if full_scale:
        return cls.paper_scale(**data)
    return cls.from_dict(data)


def cmd_dme(args) -> int:
    cfg = _config(DmeConfig, args, args.paper_scale)
    records = run_dme(cfg)
    write_csv(records, args.out, config_metadata(cfg))
    _emit({"records": [_summary(r) for r in records], "out": args.out})
    return 0


def cmd_laplace_exp(args) -> int:
    cfg = _config(LaplaceExpConfig, args, args.paper_scale)
    records = run_laplace_experiment(cfg)
    write_csv(records, args.out, config_metadata(cfg))
    _emit({"records": [_summary(r) for r in records], "out": args.out})
    return 0


def cmd_timing(args) -> int:
    cfg = TimingConfig(chunk_dims=args.chunk_dims, trials=args.trials, seed=args.seed_int)
    rows = run_timing(cfg)
    _emit({"per_chunk": [r.__dict__ for r in rows],
           "reference_seconds_per_vector": 1.3348,
           "reference_note": "reported for chunk_dim 50, d 1000, on different hardware; not comparable"})
    return 0


def _summary(r):
    return {"scheme": r.scheme, "epsilon": r.epsilon, "bits_used": r.bits_used, "mse": r.mse,
            "wall_time_seconds": r.wall_time_seconds, "trials": r.trials}


# bounds ---------------------------------------------------------------------

def cmd_bounds(args) -> int:
    w = args.which
    a = args.alpha

    def need(*names):
        missing = [n for n in names if getattr(args, n) is None]
        if missing:
            raise UserError(f"bounds {w} needs --{', --'.join(m.replace('_', '-') for m in missing)}")

    if w == "thm1":
        need("kl")
        refined, eta = refined_overhead(a)
        out = {"units": "nats", "kl": args.kl, "simple_overhead": simple_overhead(a),
               "refined_overhead": refined, "refined_eta": eta, "log_k_bound": log_k_bound(a, args.kl)}
    elif w == "cor1":
        need("epsilon")
        ell = privacy.ell_ldp(args.epsilon, a)
        out = {"units": "bits", "eta_alpha": privacy.eta_alpha(a), "ell": ell,
               "size_bound": privacy.comm_bound_ldp(args.epsilon, a)}
    elif w == "cor2":
        need("C", "n", "d")
        if args.sigma is None:
            need("epsilon", "delta")
            sigma = privacy.gaussian_sigma_for_dp(args.C, privacy.PrivacyBudget(args.epsilon, args.delta))
        else:
            sigma = args.sigma
        out = {"units": "bits", "sigma": sigma, "eta_alpha": privacy.eta_alpha(a),
               "ell": privacy.ell_gaussian(args.C, args.n, args.d, sigma, a),
               "size_bound": privacy.comm_bound_gaussian(args.C, args.n, args.d, sigma, a),
               "mse": sigma ** 2 * args.d / args.n ** 2}
        if args.epsilon is not None and args.delta is not None and args.epsilon < 1 / math.sqrt(args.n):
            loc = privacy.local_dp_of_gaussian_ppr(privacy.PrivacyBudget(args.epsilon, args.delta), args.n, a)
            out["local_dp"] = {"epsilon": loc.epsilon, "delta": loc.delta, "units": "nats"}
    elif w == "cor4":
        need("C", "d", "epsilon")
        out = {"units": "bits", "eta_alpha": privacy.eta_alpha(a),
               "ell": privacy.ell_laplace(args.C, args.d, args.epsilon, a),
               "size_bound": privacy.comm_bound_laplace(args.C, args.d, args.epsilon, a),
               "mse": args.d * (args.d + 1) / args.epsilon ** 2,
               "metric_privacy": privacy.ppr_metric_dp(args.epsilon, a)}
    elif w == "thm5":
        need("eps_tilde", "delta_tilde")
        knobs = privacy.TightDpKnobs(args.eps_tilde, args.delta_tilde)
        budget = privacy.PrivacyBudget(args.epsilon or 0.0, args.delta or 0.0)
        a_max, res = privacy.ppr_tight_dp(budget, knobs)
        out = {"units": "nats", "alpha_max": a_max, "epsilon": res.epsilon, "delta": res.delta}
    else:  # renyi
        need("gamma", "epsilon", "delta")
        out = {"units": "nats",
               "epsilon_dp": privacy.renyi_to_dp(privacy.RenyiBudget(args.gamma, args.epsilon), args.delta)}
        if args.C is not None:
            out["sigma_min"] = privacy.renyi_sigma_condition(args.C, args.gamma, args.epsilon)
    _emit(out)
    return 0


# parser ---------------------------------------------------------------------

def _alpha(text: str) -> float:
    v = float(text)
    if not v > 1.0:
        raise argparse.ArgumentTypeError("alpha must exceed 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ppr", description="Poisson private representation tools")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("encode", help="compress one mechanism output into a PPR1 container")
    e.add_argument("--mechanism", required=True, choices=["gaussian", "laplace", "cap"])
    e.add_argument("--params", required=True, help="JSON object, or @file")
    e.add_argument("--alpha", type=_alpha, default=2.0)
    e.add_argument("--seed", required=True, help="shared seed: 64 hex characters or a 64-bit integer")
    e.add_argument("--local-seed", help="encoder-private seed (default: derived from --seed)")
    e.add_argument("--in", dest="infile", required=True, help="JSON array: the input vector")
    e.add_argument("--out", required=True, help="container output path")
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="recover the output from a container and the proposal")
    d.add_argument("--mechanism-proposal", required=True, help="proposal JSON as printed by encode, or @file")
    d.add_argument("--seed", required=True)
    d.add_argument("--in", dest="infile", required=True)
    d.add_argument("--out", required=True, help="JSON array output path")
    d.set_defaults(func=cmd_decode)

    for name, func, help_ in (("dme", cmd_dme, "distributed mean estimation experiment"),
                              ("laplace-exp", cmd_laplace_exp, "metric privacy experiment")):
        q = sub.add_parser(name, help=help_)
        q.add_argument("--config", help="JSON config file")
        q.add_argument("--out", required=True, help="CSV output path")
        q.add_argument("--paper-scale", action="store_true")
        q.add_argument("--trials", type=int)
        q.add_argument("--seed", type=int)
        q.add_argument("--no-timing", action="store_true", help="write 0 wall time for byte-stable output")
        q.set_defaults(func=func)

    t = sub.add_parser("timing", help="per-chunk encode time")
    t.add_argument("--chunk-dims", type=int, nargs="+", default=[10, 20, 40])
    t.add_argument("--trials", type=int, default=100)
    t.add_argument("--seed", dest="seed_int", type=int, default=0)
    t.set_defaults(func=cmd_timing)

    b = sub.add_parser("bounds", help="evaluate size and privacy bounds")
    b.add_argument("--which", required=True, choices=["thm1", "cor1", "cor2", "cor4", "thm5", "renyi"])
    b.add_argument("--alpha", type=_alpha, default=2.0)
    for flag, typ in (("--kl", float), ("--epsilon", float), ("--delta", float), ("--C", float),
                      ("--n", int), ("--d", int), ("--sigma", float), ("--eps-tilde", float),
                      ("--delta-tilde", float), ("--gamma", float)):
        b.add_argument(flag, type=typ)
    b.set_defaults(func=cmd_bounds)
    return p


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}, "exit_code": code}),
          file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UserError, ValueError, CodecError, EncodeError, OSError) as exc:
        return _fail(1, exc)
    except Exception as exc:  # noqa: BLE001
        return _fail(2, exc)


if __name__ == "__main__":
    sys.exit(main())
