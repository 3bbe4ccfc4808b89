"""``infsa`` command-line front-end.

Matrices travel as ``.inft`` files (see :mod:`infsa.tensorio`). Every
subcommand prints a table by default, or CSV/JSON with ``--format``. Exit
status is 0 on success, 2 on usage errors and 1 on library errors.
"""

import argparse
import json
import os
import sys

import numpy as np

from infsa import bench, layers, markov, paths, validation
from infsa._backend import BACKEND
from infsa.errors import InfsaError, UsageError
from infsa.graph import DEFAULT_EPS, build_affinity, normalize_affinity
from infsa.tensorio import load_tensor, store_tensor

FORMATS = ("table", "csv", "json")


class Output:
    """Column-oriented result: named columns of equal length plus scalar metadata."""

    def __init__(self, columns=None, meta=None):
        self.columns = dict(columns or {})
        self.meta = dict(meta or {})

    @classmethod
    def matrix(cls, mat, meta=None):
        mat = np.atleast_2d(mat)
        cols = {"row": list(range(mat.shape[0]))}
        for j in range(mat.shape[1]):
            cols[f"c{j}"] = mat[:, j]
        return cls(cols, meta)


def _plain(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, float) and not np.isfinite(v):
        return None if np.isnan(v) else repr(v)
    return v


def _cell(v, fmt):
    v = _plain(v)
    if isinstance(v, float):
        return repr(v) if fmt == "csv" else f"{v:.6g}"
    if v is None:
        return "" if fmt == "csv" else "-"
    return str(v)


def emit(out, fmt, stream=None):
    stream = stream or sys.stdout
    names = list(out.columns)
    length = len(next(iter(out.columns.values()))) if names else 0
    if fmt == "json":
        doc = {k: _plain(v) for k, v in out.meta.items()}
        if names:
            doc["rows"] = [{k: _plain(out.columns[k][i]) for k in names} for i in range(length)]
        stream.write(json.dumps(doc, indent=2, allow_nan=False) + "\n")
        return
    if fmt == "csv":
        for k, v in out.meta.items():
            stream.write(f"# {k}={_cell(v, 'csv')}\n")
        if names:
            stream.write(",".join(names) + "\n")
            for i in range(length):
                stream.write(",".join(_cell(out.columns[k][i], "csv") for k in names) + "\n")
        return
    width = max((len(k) for k in out.meta), default=0)
    for k, v in out.meta.items():
        stream.write(f"{k.ljust(width)}  {_cell(v, 'table')}\n")
    if names:
        body = [[_cell(out.columns[k][i], "table") for k in names] for i in range(length)]
        widths = [max([len(n)] + [len(r[c]) for r in body]) for c, n in enumerate(names)]
        if out.meta:
            stream.write("\n")
        stream.write("  ".join(n.rjust(w) for n, w in zip(names, widths)) + "\n")
        for r in body:
            stream.write("  ".join(c.rjust(w) for c, w in zip(r, widths)) + "\n")


# ----------------------------------------------------------------------------
# subcommands


def _load_square(path):
    a = load_tensor(path)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise UsageError(f"{path}: expected a square matrix, got shape {a.shape}")
    return a


def _store(args, mat):
    if getattr(args, "output", None):
        store_tensor(args.output, mat)


def cmd_affinity(args):
    q = load_tensor(args.q)
    if args.k:
        a = build_affinity(q, load_tensor(args.k), args.eps, args.act)
    else:
        a = normalize_affinity(q, args.eps, args.act) if args.raw else build_affinity(q, q, args.eps, args.act)
    _store(args, a.mat)
    return Output.matrix(a.mat, {"frobenius_norm": float(np.linalg.norm(a.mat))})


def cmd_kernel(args):
    a = _load_square(args.input)
    if args.depth:
        k = paths.truncated_neumann(a, args.gamma, args.depth)
    else:
        k = paths.closed_form_kernel(a, args.gamma)
    _store(args, k)
    return Output.matrix(k)


def cmd_centrality(args):
    a = _load_square(args.input)
    rep = paths.centrality_report(a, args.gamma, args.per_depth)
    cols = {"token": list(range(a.shape[0])), "centrality": rep.scores}
    for t, c in enumerate(rep.per_depth or [], start=1):
        cols[f"depth{t}"] = c
    return Output(cols)


def _threads(args):
    env = os.environ.get("INFSA_THREADS")
    return int(env) if env else args.threads


def cmd_markov(args):
    a = _load_square(args.input)
    chain = markov.build_absorbing_chain(a, args.gamma)
    c_out, c_in = markov.walk_centralities(markov.fundamental_matrix(chain))
    cols = {"token": list(range(a.shape[0])), "c_out": c_out, "c_in": c_in,
            "absorb": chain.r}
    meta = {}
    if args.simulate:
        est = markov.walk_statistics(chain, args.start, args.walks, args.seed, _threads(args))
        cols["visits_mc"] = est.mean
        cols["stderr_mc"] = est.stderr
        meta = {"start": args.start, "walks": args.walks, "seed": args.seed}
    return Output(cols, meta)


def cmd_simulate(args):
    a = _load_square(args.input)
    chain = markov.build_absorbing_chain(a, args.gamma)
    est = markov.walk_statistics(chain, args.start, args.walks, args.seed, _threads(args))
    return Output({"token": list(range(a.shape[0])), "visits": est.mean, "stderr": est.stderr},
                  {"start": args.start, "walks": args.walks, "seed": args.seed})


def cmd_fig3_demo(args):
    a = markov.fig3_fixture(args.chain_weight).mat
    gamma = args.gamma
    one_hop, multi = markov.one_hop_vs_multihop_ranking(a, gamma)
    _, c_in = markov.walk_centralities(markov.fundamental_matrix(markov.build_absorbing_chain(a, gamma)))
    return Output(
        {"rank": list(range(a.shape[0])), "one_hop_token": one_hop, "c_in_token": multi},
        {"gamma": gamma, "one_hop_argmax": int(one_hop[0]), "c_in_argmax": int(multi[0]),
         "c_in": list(c_in)},
    )


def cmd_forward(args):
    rng = np.random.default_rng(args.seed)
    if args.input:
        x = load_tensor(args.input)
        x = np.atleast_2d(x)
    else:
        x = rng.standard_normal((args.tokens, args.heads * args.d_h))
    cfg = layers.MultiHeadConfig(args.heads, args.d_h, x.shape[1])
    params = layers.init_block_params(cfg, args.variant, rng, gamma=args.gamma, epsilon=args.eps)
    out = layers.multihead_block_forward(x, cfg, params, args.variant)
    _store(args, out)
    meta = {"variant": args.variant, "tokens": out.shape[0], "d_model": out.shape[1],
            "heads": cfg.n_heads, "d_h": cfg.d_h, "output_frobenius": float(np.linalg.norm(out))}
    if args.variant == "linear":
        h1 = layers.layer_norm_forward(x, params.ln1_scale, params.ln1_shift)[0]
        ranks = [int(np.linalg.matrix_rank(layers.broadcast(layers.linfsa_head_forward(h1, hp)[0], x.shape[0])))
                 for hp in params.heads]
        meta["max_head_rank"] = max(ranks)
    return Output(meta=meta)


def cmd_align(args):
    samples = validation.random_nonnegative_queries(args.samples, args.tokens, args.d_h, args.seed)
    res = validation.alignment_batch(samples, args.eps, args.t_pow)
    perron = [validation.perron_alignment(q, args.eps, args.t_pow)[0] for q in samples]
    return Output(meta={
        "samples": res.n_samples,
        "degenerate": res.n_degenerate,
        "mean_cosine_one_step": res.cosine,
        "std_cosine_one_step": res.cosine_std,
        "mean_spearman_one_step": res.spearman,
        "min_cosine_perron_limit": float(min(perron)),
        "reference_checkpoint_cosine": validation.REFERENCE_CHECKPOINT_COSINE,
    })


def cmd_gradcheck(args):
    ops = args.ops.split(",") if args.ops else list(validation.GRADCHECKS)
    unknown = [o for o in ops if o not in validation.GRADCHECKS]
    if unknown:
        raise UsageError(f"unknown operation(s): {', '.join(unknown)}")
    worst = dict.fromkeys(ops, 0.0)
    for s in range(args.seed, args.seed + args.seeds):
        for k, v in validation.layer_gradchecks(s, ops).items():
            worst[k] = max(worst[k], v)
    out = Output({"op": ops, "max_rel_err": [worst[o] for o in ops],
                  "pass": [worst[o] <= args.tol for o in ops]},
                 {"seeds": args.seeds, "tol": args.tol})
    return out


def cmd_bench(args):
    if args.compare_backends:
        rows = bench.compare_backends(args.repeats, args.seed)
        return Output({"kernel": [r[0] for r in rows], "backend": [r[1] for r in rows],
                       "seconds": [r[2] for r in rows]}, {"default_backend": BACKEND})
    variants = bench.VARIANTS if args.variant == "all" else (args.variant,)
    cols = {"variant": [], "n_tokens": [], "median_s": [], "repeats": []}
    meta = {}
    for v in variants:
        records, slope = bench.bench_scaling(v, args.sizes, args.repeats, args.seed, _threads(args),
                                             args.eps, args.gamma)
        for r in records:
            cols["variant"].append(r.variant)
            cols["n_tokens"].append(r.n_tokens)
            cols["median_s"].append("OOM" if r.oom else r.wall_time)
            cols["repeats"].append(r.repeats)
        meta[f"slope_{v}"] = slope
    return Output(cols, meta)


# ----------------------------------------------------------------------------
# argument parsing


def _sizes(text):
    try:
        return [int(s) for s in text.split(",") if s]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}")


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _global_flags(parser, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--format", choices=FORMATS, default=d("table"))
    parser.add_argument("--seed", type=_u64, default=d(0))
    parser.add_argument("--eps", type=float, default=d(DEFAULT_EPS))
    parser.add_argument("--gamma", type=float, default=d(paths.DEFAULT_GAMMA))
    parser.add_argument("--threads", type=int, default=d(1),
                        help="worker threads (INFSA_THREADS overrides)")


def build_parser():
    p = argparse.ArgumentParser(prog="infsa", description="Infinite self-attention toolkit")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("affinity", cmd_affinity, "Frobenius-normalised attention operator")
    sp.add_argument("--q", required=True, help="query features (.inft)")
    sp.add_argument("--k", help="key features (.inft); defaults to the queries")
    sp.add_argument("--raw", action="store_true", help="treat --q as a raw affinity matrix")
    sp.add_argument("--act", choices=("relu", "gelu", "abs"), default="relu")
    sp.add_argument("--output")

    sp = add("kernel", cmd_kernel, "discounted path kernel (I - gamma A)^-1 - I")
    sp.add_argument("--input", required=True)
    sp.add_argument("--depth", type=int, default=0, help="truncate the series at this depth")
    sp.add_argument("--output")

    sp = add("centrality", cmd_centrality, "token centrality from the path kernel")
    sp.add_argument("--input", required=True)
    sp.add_argument("--per-depth", type=int, default=0)

    for name, fn, help_ in (("markov", cmd_markov, "absorbing-chain visit centralities"),
                            ("simulate", cmd_simulate, "Monte-Carlo absorbing walks")):
        sp = add(name, fn, help_)
        sp.add_argument("--input", required=True)
        sp.add_argument("--walks", type=int, default=100000)
        sp.add_argument("--start", type=int, default=0)
        if name == "markov":
            sp.add_argument("--simulate", action="store_true")

    sp = add("fig3-demo", cmd_fig3_demo, "one-hop vs multi-hop ranking on the five-token graph")
    sp.add_argument("--chain-weight", type=float, default=markov.FIG3_CHAIN_WEIGHT)

    sp = add("forward", cmd_forward, "one pre-LN block forward pass")
    sp.add_argument("--variant", choices=("pure", "linear"), required=True)
    sp.add_argument("--input", help="token features (.inft); random if omitted")
    sp.add_argument("--tokens", type=int, default=196)
    sp.add_argument("--heads", type=int, default=64)
    sp.add_argument("--d-h", type=int, default=12)
    sp.add_argument("--output")

    sp = add("align", cmd_align, "Linear InfSA weights vs the Perron eigenvector")
    sp.add_argument("--samples", type=int, default=100)
    sp.add_argument("--tokens", type=int, default=16)
    sp.add_argument("--d-h", type=int, default=12)
    sp.add_argument("--t-pow", type=int, default=200)

    sp = add("gradcheck", cmd_gradcheck, "finite-difference checks of every backward pass")
    sp.add_argument("--seeds", type=int, default=20)
    sp.add_argument("--ops", help="comma-separated subset of operations")
    sp.add_argument("--tol", type=float, default=1e-5)

    sp = add("bench", cmd_bench, "latency scaling study")
    sp.add_argument("--variant", choices=bench.VARIANTS + ("all",), default="all")
    sp.add_argument("--sizes", type=_sizes, default=list(bench.DEFAULT_SIZES))
    sp.add_argument("--repeats", type=int, default=bench.MIN_REPEATS)
    sp.add_argument("--compare-backends", action="store_true",
                    help="time compiled vs pure-Python kernels instead")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        out = args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (InfsaError, ValueError, OSError) as exc:
        print(f"infsa: error: {exc}", file=sys.stderr)
        return 1
    emit(out, args.format)
    if args.command == "gradcheck" and not all(out.columns["pass"]):
        print("infsa: error: gradient check exceeded tolerance", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
