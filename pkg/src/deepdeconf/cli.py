"""Command-line entry point: ``deepdeconf <command> [flags]``.

Pipeline: simulate (or semisynth) -> fit-exposure -> fit-outcome -> evaluate,
plus sweep, jacobian and selfcheck. Exit codes: 0 success, 1 validation or
config error, 2 I/O error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as conf
from .causal import network_jacobian, report_files
from .datagen import CausalDataset, simulate_dataset, simulate_semisynthetic
from .errors import BundleIOError, ConfigError, DeconfError
from .evaluation import (METHOD_CONFIGS, ModelStack, evaluate_unbiased, fit_exposure_stage, fit_outcome_stage,
                         split_users, confounding_sweep, noise_sensitivity_study, stack_scores)
from .exposure import ExposureVae, extract_confounders
from .metrics import topk_indices
from .numkit import softmax_fw
from .outcome import OutcomeNet
from .storage import (dense_csv, dumps, load_bundle, load_checkpoint, read_dense_csv, read_json, read_ratings_csv,
                      save_bundle, save_checkpoint, save_dir)
from .vae import BetaSchedule

log = logging.getLogger("deepdeconf")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _resolve(args) -> tuple[dict, str]:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["run.seed"] = args.seed
    if getattr(args, "level", None) is not None:
        overrides["sim.gamma_theta"] = args.level
    cfg = conf.resolve(args.config, overrides)
    return cfg, conf.hash_of(cfg)


def _model_cfg(cfg: dict):
    method = cfg["model.method"]
    if method not in METHOD_CONFIGS:
        raise ConfigError(f"model.method: unknown method {method!r}")
    return conf.model_config(cfg).replace(**METHOD_CONFIGS[method])


def _split(cfg: dict, ds: CausalDataset):
    return split_users(ds.n_users, cfg["split.ratios"], seed=cfg["run.seed"], exposures=ds.exposures)


def _run_meta(cfg: dict) -> dict:
    return {"run_config": {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(cfg.items())}}


def _bundle_hash(path) -> str | None:
    return read_json(Path(path) / "manifest.json").get("config_hash")


def _check_split(meta: dict, cfg: dict, what: str) -> None:
    """Refuse to evaluate with a split other than the one the model was trained on."""
    seed, ratios = meta.get("split_seed"), meta.get("split_ratios")
    if seed != cfg["run.seed"] or tuple(ratios or ()) != tuple(cfg["split.ratios"]):
        raise ConfigError(f"run.seed/split.ratios: {what} was trained with split seed {seed}, ratios {ratios}")


def _load_exposure(path):
    params, meta = load_checkpoint(path)
    hp = meta["hyperparams"]
    vae = ExposureVae(hp["n_items"], hp["latent_dim"], hidden=tuple(hp["hidden"]),
                      beta=BetaSchedule(hp["beta_max"], hp["anneal_epochs"]))
    vae.params = params
    return vae, meta


def _load_outcome(path):
    params, meta = load_checkpoint(path)
    hp = meta["hyperparams"]
    net = OutcomeNet(hp["n_items"], hp["latent_dim"], hp["n_features"], hidden=tuple(hp["hidden"]),
                     use_features=hp["use_features"], use_confounder=hp["use_confounder"])
    net.params = params
    return net, meta


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg, chash = _resolve(args)
    ds = simulate_dataset(conf.sim_config(cfg))
    save_bundle(ds, args.out, chash, _run_meta(cfg))
    print(f"wrote {args.out}: {ds.n_users} users x {ds.n_items} items, "
          f"density {ds.exposures.mean():.4%}, config {chash[:12]}")
    return 0


def cmd_semisynth(args) -> int:
    cfg, chash = _resolve(args)
    raw, users, items = read_ratings_csv(args.raw)
    sim = conf.sim_config(cfg)
    ds = simulate_semisynthetic(raw, sim, epochs=cfg["semisynth.epochs"])
    extra = {**_run_meta(cfg), "source": {"path": str(args.raw), "user_ids": users, "item_ids": items}}
    save_bundle(ds, args.out, chash, extra)
    print(f"wrote {args.out}: {ds.n_users} users x {ds.n_items} items, density {ds.exposures.mean():.4%}")
    return 0


def cmd_fit_exposure(args) -> int:
    cfg, chash = _resolve(args)
    ds = load_bundle(args.bundle)
    split = _split(cfg, ds)
    mcfg = conf.model_config(cfg)
    vae, Z, _, train_log = fit_exposure_stage(ds, split, mcfg, seed=cfg["run.seed"])
    meta = {**_run_meta(cfg), "kind": "exposure", "hyperparams": vae.hyperparams(),
            "bundle_hash": _bundle_hash(args.bundle), "split_seed": cfg["run.seed"],
            "split_ratios": list(cfg["split.ratios"]), "train_log": train_log}
    save_checkpoint(args.out, vae.params, vae.param_names, meta, chash, files={"confounders.csv": dense_csv(Z, "z")})
    print(f"wrote {args.out}: best epoch {train_log['best_epoch']}, val log-lik {train_log['best_val']:.4f}")
    return 0


def cmd_fit_outcome(args) -> int:
    cfg, chash = _resolve(args)
    ds = load_bundle(args.bundle)
    split = _split(cfg, ds)
    mcfg = _model_cfg(cfg)
    Z = Z_val = None
    if mcfg.use_confounder:
        if args.exposure is None:
            raise ConfigError("--exposure: required unless model.method disables the confounder")
        vae, emeta = _load_exposure(args.exposure)
        _check_split(emeta, cfg, "exposure model")
        Z = read_dense_csv(Path(args.exposure) / "confounders.csv", ds.n_users)
        visible = ds.exposures[split.val].astype(np.float64) * ~split.val_holdout
        Z_val = extract_confounders(vae, visible)
    net, train_log = fit_outcome_stage(ds, split, mcfg, cfg["run.seed"], Z, Z_val)
    meta = {**_run_meta(cfg), "kind": "outcome", "hyperparams": net.hyperparams(),
            "bundle_hash": _bundle_hash(args.bundle), "split_seed": cfg["run.seed"],
            "split_ratios": list(cfg["split.ratios"]), "train_log": train_log}
    save_checkpoint(args.out, net.params, net.param_names, meta, chash)
    print(f"wrote {args.out}: best epoch {train_log['best_epoch']}, val N@{mcfg.select_k} "
          f"{train_log['best_val_ndcg']:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg, chash = _resolve(args)
    ds = load_bundle(args.bundle)
    split = _split(cfg, ds)
    net, ometa = _load_outcome(args.outcome)
    _check_split(ometa, cfg, "outcome model")
    vae = None
    if net.use_confounder:
        if args.exposure is None:
            raise ConfigError("--exposure: required for a model that uses the confounder")
        vae, _ = _load_exposure(args.exposure)
    stack = ModelStack(net, vae, np.zeros((ds.n_users, 0)))
    ks = cfg["eval.ks"]
    rec = evaluate_unbiased(stack, ds, split, ks, cfg["model.relevance_threshold"])
    metrics = {k: v for k, v in rec.summary().items() if k != "config"}
    metrics.update(config_hash=chash, n_test_users=int(len(split.test)), method=cfg["model.method"])
    scores = softmax_fw(stack_scores(stack, ds, split.test))
    top = topk_indices(scores, ds.exposures[split.test], max(ks))
    lines = ["user_id,item_id,score,rank"]
    for row, u in enumerate(split.test):
        for rank, i in enumerate(top[row], start=1):
            if np.isfinite(scores[row, i]) and ds.exposures[u, i] == 0:
                lines.append(f"{int(u)},{int(i)},{float(scores[row, i])!r},{rank}")
    save_dir(args.out, {"metrics.json": dumps(metrics), "predictions.csv": "\n".join(lines) + "\n"},
             _run_meta(cfg), chash)
    k = cfg["eval.report_k"]
    print(f"wrote {args.out}: R@{k}={rec.recall[k]:.4f} N@{k}={rec.ndcg[k]:.4f} "
          f"over {len(rec.users)} test users ({rec.skipped} without relevant items)")
    return 0


def cmd_sweep(args) -> int:
    cfg, chash = _resolve(args)
    base = conf.sim_config(cfg)
    mcfg = conf.model_config(cfg)
    kw = dict(base=base, mcfg=mcfg, seeds=cfg["sweep.seeds"], ks=cfg["eval.ks"], report_k=cfg["eval.report_k"],
              progress=lambda m: print(m, flush=True), jobs=args.jobs)
    if cfg["sweep.kind"] == "confounding":
        rows, summary = confounding_sweep(cfg["sweep.levels"], methods=cfg["sweep.methods"], **kw)
        level_name = "level"
    else:
        rows, summary = noise_sensitivity_study(cfg["sweep.noise_levels"], **kw)
        level_name = "noise"
    lines = ["level,method,metric,K,seed,value"]
    lines += [f"{r[level_name]},{r['method']},{r['metric']},{r['K']},{r['seed']},{r['value']!r}" for r in rows]
    summary = {**summary, "kind": cfg["sweep.kind"], "config_hash": chash}
    save_dir(args.out, {"sweep.csv": "\n".join(lines) + "\n", "summary.json": dumps(summary)}, _run_meta(cfg), chash)
    print(f"wrote {args.out}: argmax level {summary['argmax_level']}")
    return 0


def cmd_jacobian(args) -> int:
    cfg, chash = _resolve(args)
    net, _ = _load_outcome(args.outcome)
    mode = cfg["jacobian.mode"]
    point = {}
    if mode == "local":
        if args.bundle is None:
            raise ConfigError("--bundle: required for jacobian.mode = local")
        ds = load_bundle(args.bundle)
        u = cfg["jacobian.user"]
        if not 0 <= u < ds.n_users:
            raise ConfigError(f"jacobian.user: {u} out of range [0, {ds.n_users})")
        a = ds.exposures[u].astype(np.float64)
        z = np.zeros(net.latent_dim)
        if net.use_confounder:
            if args.exposure is None:
                raise ConfigError("--exposure: required to encode the user's confounder")
            vae, _ = _load_exposure(args.exposure)
            z = extract_confounders(vae, a[None])[0]
        x = ds.features[u] if net.use_features else np.zeros(0)
        point = {"user": u}
        rep = network_jacobian(net, a, z, x, mode="local")
    else:
        rep = network_jacobian(net, mode="global")
    files, summary = report_files(rep, cfg["jacobian.top_k"])
    files["summary.json"] = dumps({**summary, **point, "config_hash": chash})
    save_dir(args.out, files, _run_meta(cfg), chash)
    print(f"wrote {args.out}: {mode} expansion, exact={rep.exact}")
    return 0


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_all
    failed = 0
    for name, ok, detail in run_all():
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += not ok
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="deepdeconf", description="Deconfounded recommendation: data, training, evaluation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True):
        sp.add_argument("--config", type=Path, help="key = value config file")
        sp.add_argument("--seed", type=int, help="override run.seed")
        if out:
            sp.add_argument("--out", type=Path, required=True, help="output directory")
        return sp

    sp = common(sub.add_parser("simulate", help="generate a simulated dataset bundle"))
    sp.add_argument("--level", type=float, help="override sim.gamma_theta")
    sp.set_defaults(func=cmd_simulate)

    sp = common(sub.add_parser("semisynth", help="re-simulate a real rating file under controlled confounding"))
    sp.add_argument("raw", type=Path, help="CSV with header user_id,item_id,rating")
    sp.add_argument("--level", type=float, help="override sim.gamma_theta")
    sp.set_defaults(func=cmd_semisynth)

    sp = common(sub.add_parser("fit-exposure", help="train the exposure VAE and export confounders"))
    sp.add_argument("bundle", type=Path)
    sp.set_defaults(func=cmd_fit_exposure)

    sp = common(sub.add_parser("fit-outcome", help="train the outcome network"))
    sp.add_argument("bundle", type=Path)
    sp.add_argument("--exposure", type=Path, help="exposure checkpoint directory")
    sp.set_defaults(func=cmd_fit_outcome)

    sp = common(sub.add_parser("evaluate", help="unbiased test metrics and top-K predictions"))
    sp.add_argument("bundle", type=Path)
    sp.add_argument("--outcome", type=Path, required=True, help="outcome checkpoint directory")
    sp.add_argument("--exposure", type=Path, help="exposure checkpoint directory")
    sp.set_defaults(func=cmd_evaluate)

    sp = common(sub.add_parser("sweep", help="confounding or feature-noise sweep"))
    sp.add_argument("--jobs", type=int, default=1, help="worker processes")
    sp.add_argument("--level", type=float, help="override sim.gamma_theta of the base config")
    sp.set_defaults(func=cmd_sweep)

    sp = common(sub.add_parser("jacobian", help="linearize a trained outcome net"))
    sp.add_argument("--outcome", type=Path, required=True)
    sp.add_argument("--exposure", type=Path)
    sp.add_argument("--bundle", type=Path, help="dataset providing the expansion point (local mode)")
    sp.set_defaults(func=cmd_jacobian)

    sp = sub.add_parser("selfcheck", help="run the gradient, metric, OLS and Jacobian oracles")
    sp.set_defaults(func=cmd_selfcheck)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        if getattr(args, "jobs", 1) < 1:
            raise ConfigError("--jobs: must be >= 1")
        return args.func(args)
    except DeconfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {BundleIOError(str(exc))}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
