"""Command-line front end.

Exit codes: 0 success, 1 validation or domain failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import sys
from pathlib import Path

import numpy as np

from hkq import baseline, bnn, evaluation, io
from hkq.errors import ConfigurationError, HkqError
from hkq.features import DEFAULT_SCHEMA, feature_matrix, get_schema
from hkq.hk_model import HkParams, add_rayleigh_noise, sample_hk
from hkq.rng import derive_seed, stream
from hkq.uncertainty import PredictionGrid, decompose_predictive, decompose_procedural


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _snr(text):
    if text.lower() in ("none", "clean"):
        return None
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a dB value or 'none', got {text!r}") from None


def _out(args, default=None):
    if args.out is None:
        if default is None:
            raise ConfigurationError("--out is required for this command")
        return Path(default)
    return Path(args.out)


# -- commands ----------------------------------------------------------------------


def cmd_generate(args):
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    written = 0
    if args.training:
        rng = stream(derive_seed(args.seed, "generate-training"))
        la = rng.uniform(np.log10(0.5), np.log10(20.0), args.training)
        ks = rng.uniform(0.0, 1.25, args.training)
        jobs = [(HkParams(10.0 ** a, float(k)), f"train_{i:06d}", 0, derive_seed(args.seed, "generate-training", i))
                for i, (a, k) in enumerate(zip(la, ks))]
    else:
        if not args.alpha or not args.k:
            raise ConfigurationError("give --alpha and --k (or --training N)")
        jobs = []
        for a in args.alpha:
            for k in args.k:
                p = HkParams(a, k)
                for r in range(args.sets):
                    jobs.append((p, f"a{a:g}_k{k:g}", r, derive_seed(args.seed, "generate", a, k, r)))
    for p, group, r, seed in jobs:
        env = sample_hk(p, args.n, seed)
        if args.snr is not None:
            env = add_rayleigh_noise(env, args.snr, derive_seed(seed, "noise", args.snr))
        d = out / group
        d.mkdir(exist_ok=True)
        io.write_envelope_file(env, d / f"set_{r:04d}{io.ENV_SUFFIX}")
        written += 1
    print(f"wrote {written} envelope files to {out}")


def _features_of_dir(inp, schema):
    files = io.envelope_files(inp)
    if not files:
        raise ConfigurationError(f"no {io.ENV_SUFFIX} files under {inp}")
    sets = [io.read_envelope_file(f) for f in files]
    values = np.stack([np.atleast_2d(feature_matrix(env.samples, schema))[0] for env in sets])
    meta = []
    for f, env in zip(files, sets):
        rel = f.relative_to(inp)
        meta.append({
            "file": rel.as_posix(),
            "group": rel.parent.as_posix() if rel.parent != Path(".") else Path(inp).name,
            "log10_alpha": None if env.truth is None else env.truth.log10_alpha,
            "k": None if env.truth is None else env.truth.k,
            "snr_db": env.snr_db,
        })
    return values, meta


def cmd_features(args):
    schema = get_schema(args.schema)
    values, meta = _features_of_dir(Path(args.input), schema)
    out = _out(args)
    io.write_features(out, schema, values, meta)
    print(f"wrote {len(meta)} feature rows to {out}")


def _train_config(args):
    return bnn.TrainConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        kl_weight=args.kl_weight,
        mc_samples_per_step=args.mc_samples,
        seed=args.seed,
        log_every=args.log_every,
        hidden_widths=args.hidden,
        prior_stddev=args.prior_stddev,
    )


def cmd_train(args):
    if args.features:
        ft = io.read_features(args.features)
        truth = ft.truth()
        if np.isnan(truth).any():
            raise ConfigurationError("training rows need log10_alpha and k")
        data = bnn.TrainingData(ft.values, truth, ft.schema_id)
    elif args.simulate:
        data = evaluation.simulate_training_data(args.simulate, args.samples, seed=derive_seed(args.seed, "train-data"),
                                                 threads=args.threads)
    else:
        raise ConfigurationError("give --features FILE or --simulate N")
    model, log = bnn.train(data, _train_config(args))
    out = _out(args)
    bnn.save_model(model, out)
    print(f"trained on {len(data)} sets; final loss {log[-1]['loss']:.6g}; model written to {out}")


def cmd_predict(args):
    model = bnn.load_model(args.model)
    ft = io.read_features(args.features)
    draws = bnn.predict_mc(model, ft.values, args.draws, seed=args.seed, schema_id=ft.schema_id)
    out = _out(args)
    io.write_draws(out, draws, ft.groups, list(model.targets))
    print(f"wrote {draws.means.shape[0]} x {draws.means.shape[1]} draws to {out}")


def cmd_table_build(args):
    schema = get_schema(args.schema)
    alphas, ks = baseline.default_grid(args.n_alpha, args.n_k)
    table = baseline.build_table(alphas, ks, args.n_per_point, schema, seed=args.seed,
                                 repetitions=args.repetitions, threads=args.threads)
    out = _out(args)
    io.write_table(table, out, schema.names)
    print(f"wrote {len(table)} table entries to {out}")


def cmd_table_estimate(args):
    from hkq.features import FeatureVector

    table = io.read_table(args.table)
    ft = io.read_features(args.features)
    rows = []
    for m, v in zip(ft.meta, ft.values):
        est = baseline.table_estimate(table, FeatureVector(v, ft.schema_id))
        rows.append({"file": m["file"], "group": m["group"], "alpha": est.alpha,
                     "log10_alpha": est.log10_alpha, "k": est.k,
                     "true_log10_alpha": m["log10_alpha"], "true_k": m["k"]})
    out = _out(args)
    io.write_report(out, rows)
    print(f"wrote {len(rows)} table estimates to {out}")


def _quartiles(values):
    # linear interpolation between order statistics
    return np.percentile(values, 25, method="linear"), np.percentile(values, 75, method="linear")


def _decompose_rows(group, means, variances, targets, method):
    """Rows for one group of realizations; ``means`` is [realizations, draws, targets]."""
    grid = PredictionGrid(means[None], None if variances is None else variances[None])
    reports = []
    if method in ("procedural", "both"):
        reports.append(decompose_procedural(grid))
    if method in ("predictive", "both"):
        reports.append(decompose_predictive(grid))
    rows = []
    for rep in reports:
        for row in rep.rows([group], targets):
            t = targets.index(row["target"])
            flat = means[:, :, t].ravel()
            q25, q75 = _quartiles(flat)
            row.update({"n_realizations": means.shape[0], "n_draws": means.shape[1],
                        "mean": float(flat.mean()), "q25": float(q25), "q75": float(q75)})
            rows.append(row)
    return rows


def cmd_decompose(args):
    groups_data = {}
    if args.draws:
        groups, means, variances, targets = io.read_draws(args.draws)
        if np.isnan(variances).any():
            variances = None
        for g in dict.fromkeys(groups):
            idx = [i for i, x in enumerate(groups) if x == g]
            groups_data[g] = (means[idx], None if variances is None else variances[idx])
    elif args.patches:
        if not args.model:
            raise ConfigurationError("--patches needs --model")
        model = bnn.load_model(args.model)
        schema = get_schema(model.schema_id)
        targets = list(model.targets)
        for d in args.patches:
            pd = io.read_patch_directory(d)
            feats = np.stack([np.atleast_2d(feature_matrix(p.samples, schema))[0] for p in pd.patches])
            dr = bnn.predict_mc(model, feats, args.n_draws, seed=derive_seed(args.seed, "decompose", pd.region))
            groups_data[pd.region] = (dr.means, dr.variances)
    else:
        raise ConfigurationError("give --draws FILE or --patches DIR [DIR ...] with --model")
    rows = []
    for g, (m, v) in groups_data.items():
        rows += _decompose_rows(g, m, v, targets, args.method)
    out = _out(args)
    io.write_report(out, rows, ["set_id", "target", "method", "epistemic", "aleatoric", "total",
                                "mean", "q25", "q75", "n_realizations", "n_draws"])
    print(f"wrote {len(rows)} uncertainty rows to {out}")


def cmd_evaluate(args):
    model = bnn.load_model(args.model)
    config = evaluation.ExperimentConfig(
        n_alpha=args.n_alpha, n_k=args.n_k, realizations=args.realizations,
        samples_per_set=args.samples, snr_levels=tuple(args.snr), draws=args.n_draws,
        seed=args.seed, error_mode=args.error_mode,
    )
    report = evaluation.run_experiment(config, model, threads=args.threads)
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    io.write_report(out / "report.csv", report.rows)
    io.write_summary(out / "summary.json", report.summary)
    for label, level in report.summary["levels"].items():
        c = level["log10_alpha"]["correlation"]["total"]
        print(f"snr {label}: rmse(log10_alpha)={level['log10_alpha']['rmse']:.4f} "
              f"r(error,total)={c['r'] if c['r'] is None else round(c['r'], 4)}")
    print(f"wrote report and summary to {out}")


def cmd_ingest(args):
    for d in args.input:
        pd = io.read_patch_directory(d, region=args.region)
        sizes = sorted({len(p) for p in pd.patches})
        print(f"{pd.region}: {len(pd.patches)} patches, sizes {sizes[0]}..{sizes[-1]}")


# -- parser ----------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--strict-determinism", action="store_true",
                        help="single-threaded BLAS and ordered reductions")
    common.add_argument("--out", default=None)

    parser = argparse.ArgumentParser(prog="hkq", description="HK parameter estimation with uncertainty")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="simulate envelope set files")
    p.add_argument("--alpha", type=_floats, default=[])
    p.add_argument("--k", type=_floats, default=[])
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--sets", type=int, default=10)
    p.add_argument("--snr", type=_snr, default=None)
    p.add_argument("--training", type=int, default=0, help="N random training sets instead of a grid")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("features", parents=[common], help="envelope files to feature CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--schema", default=DEFAULT_SCHEMA.id)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", parents=[common], help="train the variational network")
    p.add_argument("--features")
    p.add_argument("--simulate", type=int, default=0)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--kl-weight", type=float, default=1.0)
    p.add_argument("--mc-samples", type=int, default=1)
    p.add_argument("--log-every", type=int, default=500)
    p.add_argument("--hidden", type=_ints, default=(64, 64))
    p.add_argument("--prior-stddev", type=float, default=1.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="Monte-Carlo predictions")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--draws", type=int, default=50)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("table", help="table-search baseline")
    tsub = p.add_subparsers(dest="table_command", required=True)
    t = tsub.add_parser("build", parents=[common])
    t.add_argument("--n-alpha", type=int, default=31)
    t.add_argument("--n-k", type=int, default=11)
    t.add_argument("--n-per-point", type=int, default=1000)
    t.add_argument("--repetitions", type=int, default=10)
    t.add_argument("--schema", default=DEFAULT_SCHEMA.id)
    t.set_defaults(func=cmd_table_build)
    t = tsub.add_parser("estimate", parents=[common])
    t.add_argument("--table", required=True)
    t.add_argument("--features", required=True)
    t.set_defaults(func=cmd_table_estimate)

    p = sub.add_parser("decompose", parents=[common], help="epistemic/aleatoric report")
    p.add_argument("--draws")
    p.add_argument("--patches", nargs="+")
    p.add_argument("--model")
    p.add_argument("--n-draws", type=int, default=50)
    p.add_argument("--method", choices=("procedural", "predictive", "both"), default="both")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("evaluate", parents=[common], help="full simulation experiment")
    p.add_argument("--model", required=True)
    p.add_argument("--n-alpha", type=int, default=31)
    p.add_argument("--n-k", type=int, default=11)
    p.add_argument("--realizations", type=int, default=10)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--snr", type=_snr, nargs="+", default=[None, 40.0, 30.0, 20.0])
    p.add_argument("--n-draws", type=int, default=50)
    p.add_argument("--error-mode", choices=evaluation.ERROR_MODES, default="rmse")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ingest", parents=[common], help="validate patch directories")
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--region")
    p.set_defaults(func=cmd_ingest)
    return parser


def _strict():
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=1)


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    if args.strict_determinism:
        args.threads = 1
    try:
        with _strict() if args.strict_determinism else contextlib.nullcontext():
            args.func(args)
    except HkqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
