"""Command-line front end: ``grtm simulate | fit | predict | eval | topics``.

Every option can also be given in a ``key = value`` config file passed
with ``--config``; command-line flags override the file, which overrides
the built-in defaults.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from grtm import io as gio
from grtm.baselines import baseline_scores
from grtm.errors import ContractError, GRTMError
from grtm.evaluation import evaluate, evaluation_universe, split_links
from grtm.generator import GenConfig, sample_corpus
from grtm.inference import FitConfig, fit
from grtm.linkpredict import rank_candidates, score_pairs
from grtm.model import Hyperparams, validate

logger = logging.getLogger("grtm")

COV_FLAGS = {"diag": "diagonal", "full": "full"}


class UsageError(Exception):
    pass


def _floats(text):
    return tuple(float(x) for x in str(text).split(",") if x.strip())


# Each command maps option name -> (type, default, help).
COMMANDS = {
    "simulate": {
        "out_dir": (str, None, "directory receiving features.grtm, links.txt, truth.json"),
        "users": (int, 60, "number of users"),
        "k": (int, 5, "number of planted topics"),
        "dim": (int, 8, "feature dimension"),
        "alpha": (float, 0.3, "Dirichlet concentration of topic proportions"),
        "images_min": (int, 40, "minimum images per user"),
        "images_max": (int, 40, "maximum images per user"),
        "separation": (float, 10.0, "pairwise topic-mean distance in units of sigma"),
        "sigma": (float, 1.0, "per-dimension topic standard deviation"),
        "eta": (_floats, None, "comma-separated link weights (default 6 per topic)"),
        "nu": (float, -6.0, "link offset"),
        "seed": (int, 0, "random seed"),
        "format": (str, "binary", "feature file format: binary or csv"),
    },
    "fit": {
        "features": (str, None, "feature file"),
        "links": (str, None, "link file"),
        "model": (str, None, "output model file"),
        "k": (int, 100, "number of topics"),
        "alpha": (float, 2.0, "Dirichlet hyperparameter"),
        "rho": (float, 1.0, "negative-link regularisation"),
        "cov": (str, "diag", "covariance form: diag or full"),
        "train_ratio": (float, None, "hold out links: fraction used for training"),
        "seed": (int, 0, "random seed (initialisation and split)"),
        "max_iters": (int, 500, "maximum EM iterations"),
        "tol": (float, 1e-5, "relative ELBO change for convergence"),
        "init": (str, "kmeans_pp", "initialisation: kmeans_pp or random_assign"),
        "eta_form": (str, "rtm", "eta update: rtm or printed"),
        "log_every": (int, 10, "log the ELBO every n iterations (0 disables)"),
        "no_phi": (bool, False, "omit per-image responsibilities from the model file"),
    },
    "predict": {
        "model": (str, None, "model file"),
        "user": (int, None, "user to recommend links for"),
        "top_n": (int, 10, "number of candidates"),
        "links": (str, None, "links to exclude (default: the model's training links)"),
    },
    "eval": {
        "features": (str, None, "feature file"),
        "links": (str, None, "link file with all observed links"),
        "out_dir": (str, None, "directory for roc.csv, pr.csv, summary.txt"),
        "method": (str, "grtm", "grtm, mean or boft"),
        "model": (str, None, "fitted model (grtm only; fitted on the split when absent)"),
        "train_ratio": (float, 0.6, "fraction of links used for training"),
        "seed": (int, 0, "split and fitting seed"),
        "k": (int, 100, "topics (grtm) or clusters (boft)"),
        "alpha": (float, 2.0, "Dirichlet hyperparameter"),
        "rho": (float, 1.0, "negative-link regularisation"),
        "cov": (str, "diag", "covariance form: diag or full"),
        "max_iters": (int, 500, "maximum EM iterations"),
        "tol": (float, 1e-5, "relative ELBO change for convergence"),
        "eta_form": (str, "rtm", "eta update: rtm or printed"),
    },
    "topics": {
        "model": (str, None, "model file"),
        "features": (str, None, "feature file the model was fit on"),
        "per_topic": (int, 5, "representative images per topic"),
    },
}

REQUIRED = {
    "simulate": ("out_dir",),
    "fit": ("features", "links", "model"),
    "predict": ("model", "user"),
    "eval": ("features", "links", "out_dir"),
    "topics": ("model", "features"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="grtm", description="Gaussian relational topic model")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, options in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value file supplying defaults")
        for key, (typ, _, help_) in options.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, dest=key, action="store_const", const=True, default=None, help=help_)
            else:
                p.add_argument(flag, dest=key, type=typ, default=None, help=help_)
    return parser


def read_config(path, command):
    """Parse a ``key = value`` file, rejecting keys the command lacks."""
    options = COMMANDS[command]
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise UsageError(f"{path}, line {lineno}: expected key = value")
        key, raw = (s.strip() for s in body.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in options:
            raise UsageError(f"{path}, line {lineno}: unknown key {key!r} for '{command}'")
        typ = options[key][0]
        try:
            if typ is bool:
                values[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                values[key] = typ(raw)
        except ValueError as exc:
            raise UsageError(f"{path}, line {lineno}: bad value for {key}: {exc}") from None
    return values


def resolve(args):
    """Merge flags over config file over defaults into a plain namespace."""
    options = COMMANDS[args.command]
    from_file = read_config(args.config, args.command) if args.config else {}
    merged = {}
    for key, (_, default, _) in options.items():
        flag = getattr(args, key)
        merged[key] = flag if flag is not None else from_file.get(key, default)
    missing = [k for k in REQUIRED[args.command] if merged[k] is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return argparse.Namespace(command=args.command, **merged)


def _hyperparams(opts):
    if opts.cov not in COV_FLAGS:
        raise UsageError(f"--cov must be diag or full, got {opts.cov!r}")
    try:
        return Hyperparams(
            alpha=opts.alpha,
            K=opts.k,
            rho=opts.rho,
            cov_kind=COV_FLAGS[opts.cov],
            max_iters=opts.max_iters,
            elbo_rel_tol=opts.tol,
            seed=opts.seed,
        )
    except ContractError as exc:
        raise UsageError(str(exc)) from None


def _load_inputs(opts):
    corpus = gio.load_features(opts.features)
    links = gio.load_links(opts.links)
    problems = validate(corpus, links)
    if problems:
        raise GRTMError("invalid input: " + "; ".join(problems[:5]))
    return corpus, links


def cmd_simulate(opts, out):
    try:
        cfg = GenConfig(
            N=opts.users,
            images_per_user=(opts.images_min, opts.images_max),
            K=opts.k,
            D=opts.dim,
            alpha=opts.alpha,
            topic_mean_separation=opts.separation,
            sigma=opts.sigma,
            eta_true=opts.eta,
            nu_true=opts.nu,
            seed=opts.seed,
        )
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    if opts.format not in ("binary", "csv"):
        raise UsageError(f"--format must be binary or csv, got {opts.format!r}")
    corpus, links, truth = sample_corpus(cfg)
    out_dir = Path(opts.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    feat_name = "features.grtm" if opts.format == "binary" else "features.csv"
    gio.save_features(corpus, out_dir / feat_name, fmt=opts.format)
    gio.save_links(links, out_dir / "links.txt")
    doc = {
        "theta": truth.theta.tolist(),
        "z": [z.tolist() for z in truth.z],
        "means": truth.topic_params.means.tolist(),
        "sigma": cfg.sigma,
        "eta": truth.link_model_true.eta.tolist(),
        "nu": truth.link_model_true.nu,
        "seed": cfg.seed,
    }
    gio.atomic_write(out_dir / "truth.json", json.dumps(doc, sort_keys=True) + "\n")
    print(f"users={corpus.n_users} dim={corpus.dim} topics={cfg.K} images={corpus.n_total} links={len(links)}", file=out)


def _fit_config(opts):
    if opts.eta_form not in ("rtm", "printed"):
        raise UsageError(f"--eta-form must be rtm or printed, got {opts.eta_form!r}")
    init = getattr(opts, "init", "kmeans_pp")
    if init not in ("kmeans_pp", "random_assign"):
        raise UsageError(f"--init must be kmeans_pp or random_assign, got {init!r}")
    return FitConfig(_hyperparams(opts), init, getattr(opts, "log_every", 0), opts.eta_form)


def cmd_fit(opts, out):
    cfg = _fit_config(opts)
    corpus, links = _load_inputs(opts)
    train, split_info = links, {}
    if opts.train_ratio is not None:
        split = split_links(links, opts.train_ratio, opts.seed)
        train = split.train
        split_info = {"train_ratio": opts.train_ratio, "seed": opts.seed, "n_links": len(links)}
        lines = ["# u v part\n"]
        lines += [f"{u} {v} train\n" for u, v in split.train]
        lines += [f"{u} {v} test\n" for u, v in split.test]
        gio.atomic_write(str(opts.model) + ".split", "".join(lines))
    model = fit(corpus, train, cfg)
    model.split_info = split_info
    gio.save_model(model, opts.model, include_phi=not opts.no_phi)
    logger.info(
        "fit finished after %d iterations, ELBO %.10g", len(model.elbo_trace) - 1, model.elbo_trace[-1]
    )
    print(f"model={opts.model} iterations={len(model.elbo_trace) - 1} elbo={model.elbo_trace[-1]!r}", file=out)


def cmd_predict(opts, out):
    model = gio.load_model(opts.model)
    n = model.n_users
    if not 0 <= opts.user < n:
        raise GRTMError(f"unknown user {opts.user}; valid ids are 0..{n - 1}")
    exclude = gio.load_links(opts.links) if opts.links else model.train_links
    for rank, (v, score) in enumerate(rank_candidates(model, opts.user, exclude, opts.top_n), start=1):
        print(f"{rank} {v} {score!r}", file=out)


def cmd_eval(opts, out):
    if opts.method not in ("grtm", "mean", "boft"):
        raise UsageError(f"--method must be grtm, mean or boft, got {opts.method!r}")
    corpus, links = _load_inputs(opts)
    split = split_links(links, opts.train_ratio, opts.seed)
    universe = evaluation_universe(corpus.n_users, split.train)
    if opts.method == "grtm":
        if opts.model:
            model = gio.load_model(opts.model)
            info = model.split_info
            if (
                not info
                or info.get("train_ratio") != opts.train_ratio
                or info.get("seed") != opts.seed
                or model.train_links != split.train
            ):
                raise GRTMError(
                    "model was not fit on this split; refit with "
                    f"--train-ratio {opts.train_ratio} --seed {opts.seed}"
                )
        else:
            model = fit(corpus, split.train, _fit_config(opts))
        values = score_pairs(model.variational_state.phibar(), model.link_model, universe)
        scores = dict(zip(universe, values.tolist()))
    else:
        scores = baseline_scores(corpus, opts.method, n_clusters=min(opts.k, corpus.n_total), seed=opts.seed, pairs=universe)
    report = evaluate(scores, split, corpus.n_users)
    gio.export_report(report, opts.out_dir, label=opts.method)
    p10 = report.precision_at[0.1]
    print(
        f"method={opts.method} roc_auc={report.roc_auc:.6f} pr_auc={report.pr_auc:.6f} precision@0.10={p10:.6f}",
        file=out,
    )


def representatives(model, corpus, per_topic):
    """Per topic, the ``per_topic`` images with the highest log density.

    Returns a list over topics of [(user, n, log_density), ...]; ties are
    broken by (user, n).
    """
    topics = model.topic_params
    if topics.dim != corpus.dim:
        raise GRTMError(f"model dimension {topics.dim} != feature dimension {corpus.dim}")
    X = corpus.stacked
    dens = topics.log_densities(X)
    owner = corpus.owner
    local = np.arange(X.shape[0]) - corpus.offsets[owner]
    result = []
    for k in range(topics.K):
        order = np.lexsort((local, owner, -dens[:, k]))[:per_topic]
        result.append([(int(owner[i]), int(local[i]), float(dens[i, k])) for i in order])
    return result


def cmd_topics(opts, out):
    model = gio.load_model(opts.model)
    corpus = gio.load_features(opts.features)
    if opts.per_topic < 0:
        raise UsageError("--per-topic must be nonnegative")
    for k, reps in enumerate(representatives(model, corpus, opts.per_topic)):
        for rank, (u, n, ld) in enumerate(reps, start=1):
            print(f"{k} {rank} {u} {n} {ld!r}", file=out)


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "topics": cmd_topics,
}


def _thread_cap():
    raw = os.environ.get("GRTM_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"GRTM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"GRTM_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        opts = resolve(args)
        threads = _thread_cap()
        if threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                HANDLERS[args.command](opts, out)
        else:
            HANDLERS[args.command](opts, out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"grtm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (GRTMError, OSError) as exc:
        print(f"grtm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
