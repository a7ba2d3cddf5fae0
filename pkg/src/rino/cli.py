"""Command-line interface: ``rino <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
import argparse
import logging
import os
import sys
import warnings
from dataclasses import fields

import numpy as np

from . import binfmt, cache, maps, rinonet, training
from .evaluation import EvalReport, count_sym_flips, mean_geo_err, similarity_heatmap, transfer_colors
from .mesh import MeshError, load_mesh, normalize_unit_area, read_labels, save_mesh, write_labels
from .operators import EigenSolveError, OperatorError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MAP_MAGIC = b"RMAP"
MAP_VERSION = 1

# key -> (type, default); flags mirror these names with dashes
CONFIG_KEYS = {
    "k": (int, 200), "kq": (int, 30), "c": (int, 42), "out_dim": (int, 256), "mlp_hidden": (int, 188),
    "blocks": (int, 4), "knn": (int, 16), "tau": (float, maps.DEFAULT_TAU), "gamma": (float, maps.DEFAULT_GAMMA),
    "gamma_q": (float, maps.DEFAULT_GAMMA_Q), "lambda1": (float, 1.0), "lambda2": (float, 0.1),
    "lambda3": (float, 1.0), "lambda4": (float, 1.0), "lambda5": (float, 0.1), "lambda6": (float, 1.0),
    "cq": (float, 1.0), "lr": (float, 1e-3), "steps": (int, 200), "seed": (int, 0), "normalize_pi": (bool, True),
    "checkpoint_every": (int, 0), "cache_dir": (str, None), "disable_struct": (bool, False),
    "disable_couple": (bool, False), "disable_contr": (bool, False), "disable_qbranch": (bool, False),
    "disable_pi_q": (bool, False), "enable_cq_coupling": (bool, False),
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _parse_bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {s!r}")


def _convert(key, raw):
    typ = CONFIG_KEYS[key][0]
    try:
        if typ is bool:
            return _parse_bool(raw)
        return typ(raw)
    except ValueError:
        raise UsageError(f"config key {key!r}: cannot parse {raw!r} as {typ.__name__}") from None


def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are rejected."""
    out = {}
    try:
        text = open(path).read()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _convert(key, val)
    return out


def resolve_config(args):
    cfg = {k: v[1] for k, v in CONFIG_KEYS.items()}
    if getattr(args, "config", None):
        cfg.update(read_config(args.config))
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if cfg["cache_dir"] is None:
        cfg["cache_dir"] = cache.default_cache_dir()
    return cfg


def train_config(cfg, checkpoint=None):
    weights = training.LossWeights(
        cfg["lambda1"], cfg["lambda2"], cfg["lambda3"], cfg["lambda4"], cfg["lambda5"], cfg["lambda6"], cfg["cq"],
        struct=not cfg["disable_struct"], couple=not cfg["disable_couple"], contr=not cfg["disable_contr"],
        qbranch=not cfg["disable_qbranch"], pi_q=not cfg["disable_pi_q"], couple_cq=cfg["enable_cq_coupling"],
    )
    names = {f.name for f in fields(training.TrainConfig)}
    kw = {k: v for k, v in cfg.items() if k in names}
    return training.TrainConfig(checkpoint=checkpoint, weights=weights, **kw)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _add_config_flags(p):
    p.add_argument("--config", help="key = value configuration file")
    for key, (typ, default) in CONFIG_KEYS.items():
        flag = "--" + key.replace("_", "-")
        if typ is bool:
            if key.startswith(("disable_", "enable_")):
                p.add_argument(flag, dest=key, action="store_const", const=True, default=None,
                               help=f"(default {default})")
            else:
                p.add_argument(flag, dest=key, type=_parse_bool, default=None, help=f"(default {default})")
        else:
            p.add_argument(flag, dest=key, type=typ, default=None, help=f"(default {default})")


def build_parser():
    parser = _Parser(prog="rino", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("precompute", help="build and cache operators and spectral bases")
    p.add_argument("meshes", nargs="+")
    _add_config_flags(p)

    p = sub.add_parser("train", help="train on a list of mesh pairs")
    p.add_argument("--pairs", required=True, help="text file, one 'meshA meshB' pair per line")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-csv", help="loss log (step, term, value)")
    p.add_argument("--resume", help="checkpoint to continue from")
    _add_config_flags(p)

    p = sub.add_parser("match", help="correspondence from mesh A to mesh B")
    p.add_argument("mesh_a")
    p.add_argument("mesh_b")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--checkpoint")
    g.add_argument("--random-init", action="store_true")
    p.add_argument("--out", required=True, help="correspondence file, one B index per A vertex")
    p.add_argument("--dump-maps", help="write C, Q and Pi to this binary file")
    p.add_argument("--features-out", help="write the features of mesh A as text")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="mGeoErr report of a correspondence file")
    p.add_argument("--corr", required=True, nargs="+")
    p.add_argument("--gt", required=True, nargs="+")
    p.add_argument("--mesh", required=True, nargs="+", help="target meshes")
    p.add_argument("--sym-gt", nargs="+")
    p.add_argument("--setting", default="I/I")
    p.add_argument("--out", help="CSV report path")

    p = sub.add_parser("export-colors", help="PLY with per-vertex colours")
    p.add_argument("mesh")
    p.add_argument("--out", required=True)
    p.add_argument("--corr", help="correspondence file into --target")
    p.add_argument("--target", help="target mesh for colour transfer")
    p.add_argument("--features", help="feature matrix (text) for a similarity heat map")
    p.add_argument("--vertex", type=int, default=0)

    p = sub.add_parser("selfcheck", help="equivariance, gradient and oracle checks")
    p.add_argument("--seed", type=int, default=0)
    return parser


# helpers ---------------------------------------------------------------------------

def load_input(path):
    try:
        return normalize_unit_area(load_mesh(path))
    except (OSError, MeshError) as exc:
        raise DataError(str(exc)) from None


def shape_for(path, cfg, log=print):
    mesh = load_input(path)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            shape, hit = cache.cached_shape(mesh, cfg["k"], cfg["kq"], cfg["cache_dir"])
        except (OperatorError, MeshError) as exc:
            raise DataError(f"{path}: {exc}") from None
        except EigenSolveError as exc:
            raise EigenSolveError(f"{path}: {exc}") from None
    for w in caught:
        log(f"warning: {path}: {w.message}")
    return shape, hit


def read_pairs(path):
    try:
        lines = open(path).read().splitlines()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    for i, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"{path}:{i}: expected two mesh paths")
        pairs.append(tuple(p if os.path.isabs(p) else os.path.join(base, p) for p in parts))
    if not pairs:
        raise DataError(f"{path}: no pairs listed")
    return pairs


def _load_params(cfg, checkpoint, random_init):
    if checkpoint:
        try:
            return rinonet.load_params(checkpoint)
        except OSError as exc:
            raise DataError(f"{checkpoint}: {exc}") from None
        except binfmt.ContainerError as exc:
            raise DataError(f"{checkpoint}: {exc}") from None
    if not random_init:
        raise UsageError("match needs --checkpoint or --random-init")
    return rinonet.init_params(cfg["seed"], train_config(cfg).net_config())


# commands --------------------------------------------------------------------------

def cmd_precompute(args, out=print):
    cfg = resolve_config(args)
    for path in args.meshes:
        shape, hit = shape_for(path, cfg, out)
        out(f"{path}: {'cache hit' if hit else 'computed'} (n={shape.n}, k={shape.basis.k}, kq={shape.cbasis.k})")
    return EXIT_OK


def cmd_train(args, out=print):
    cfg = resolve_config(args)
    tc = train_config(cfg, checkpoint=args.out)
    shapes = {}
    ctx_pairs = []
    for a, b in read_pairs(args.pairs):
        for p in (a, b):
            if p not in shapes:
                shapes[p] = training.ShapeContext(shape_for(p, cfg, out)[0], tc.knn)
        ctx_pairs.append((shapes[a], shapes[b]))

    def cb(step, loss, terms):
        if step == 1 or step % 10 == 0 or step == tc.steps:
            out(f"step {step}: loss {loss:.6g}")

    _, log = training.train_loop(ctx_pairs, tc, resume=args.resume, log_csv=args.loss_csv, callback=cb)
    out(f"saved {args.out} after {len(log)} logged steps")
    return EXIT_OK


def cmd_match(args, out=print):
    cfg = resolve_config(args)
    params = _load_params(cfg, args.checkpoint, args.random_init)
    sa, _ = shape_for(args.mesh_a, cfg, out)
    sb, _ = shape_for(args.mesh_b, cfg, out)
    FA, FB = rinonet.features(sa, params), rinonet.features(sb, params)
    corr = maps.hard_map_nn(FA, FB)
    write_labels(args.out, corr)
    if args.features_out:
        np.savetxt(args.features_out, FA, fmt="%.17g")
    if args.dump_maps:
        tc = train_config(cfg)
        A, B = maps.feature_coeffs(sa.basis, FA), maps.feature_coeffs(sb.basis, FB)
        C = maps.solve_fmap(A, B, sa.basis.evals, sb.basis.evals, tc.gamma)
        Q = maps.solve_cfmap(sa.ops.grad @ FA, sb.ops.grad @ FB, sa.cbasis, sb.cbasis, tc.gamma_q)
        NA, NB = (training.row_normalize(FA), training.row_normalize(FB)) if tc.normalize_pi else (FA, FB)
        Pi = maps.soft_pointwise(NB, NA, tc.tau)
        key = cache.cache_key(sa.mesh, sa.basis.k, sa.cbasis.k)
        binfmt.write(args.dump_maps, MAP_MAGIC, MAP_VERSION, key, {"C": C, "Q": Q, "Pi_YX": Pi})
    out(f"wrote {len(corr)} matches to {args.out}")
    return EXIT_OK


def cmd_eval(args, out=print):
    n = len(args.corr)
    if len(args.gt) != n or len(args.mesh) not in (1, n) or (args.sym_gt and len(args.sym_gt) != n):
        raise UsageError("--corr, --gt (and --sym-gt) need one entry per pair; --mesh one or one per pair")
    meshes = [load_mesh(p) for p in args.mesh]
    meshes = meshes * n if len(meshes) == 1 else meshes
    try:
        preds = [read_labels(p) for p in args.corr]
        gts = [read_labels(p) for p in args.gt]
        syms = [read_labels(p) for p in args.sym_gt] if args.sym_gt else None
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None
    report = EvalReport()
    for i in range(n):
        try:
            e = mean_geo_err(preds[i], gts[i], meshes[i])
            flipped = False
            if syms:
                _, _, f = count_sym_flips([preds[i]], [gts[i]], [syms[i]], [meshes[i]])
                flipped = f > 0
        except ValueError as exc:
            raise DataError(f"{args.corr[i]}: {exc}") from None
        report.add(os.path.basename(args.corr[i]), args.setting, e, flipped)
    text = report.to_csv(args.out)
    if not args.out:
        out(text.rstrip())
    out(report.summary())
    if syms:
        out(f"flips: {report.flips} of {n}")
    return EXIT_OK


def cmd_export_colors(args, out=print):
    mesh = load_mesh(args.mesh)
    if args.features:
        try:
            F = np.loadtxt(args.features, ndmin=2)
        except (OSError, ValueError) as exc:
            raise DataError(f"{args.features}: {exc}") from None
        if len(F) != mesh.n_vertices:
            raise DataError("feature rows do not match the mesh vertices")
        if not 0 <= args.vertex < len(F):
            raise UsageError("--vertex out of range")
        colors = similarity_heatmap(F, args.vertex)
    elif args.corr and args.target:
        corr = read_labels(args.corr)
        target = load_mesh(args.target)
        if len(corr) != mesh.n_vertices or corr.max() >= target.n_vertices or corr.min() < 0:
            raise DataError("correspondence does not fit the meshes")
        colors = transfer_colors(corr, target.vertices)
    else:
        raise UsageError("export-colors needs --features or both --corr and --target")
    save_mesh(args.out, mesh, colors=colors)
    out(f"wrote {args.out}")
    return EXIT_OK


def cmd_selfcheck(args, out=print):
    from .selfcheck import run_selfcheck

    results = run_selfcheck(seed=args.seed, out=out)
    ok = all(r.passed for r in results)
    out("selfcheck: " + ("all checks passed" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {
    "precompute": cmd_precompute, "train": cmd_train, "match": cmd_match, "eval": cmd_eval,
    "export-colors": cmd_export_colors, "selfcheck": cmd_selfcheck,
}


def main(argv=None, out=print):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"rino: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, MeshError, binfmt.ContainerError, FileNotFoundError) as exc:
        print(f"rino: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (EigenSolveError, training.TrainingError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"rino: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
