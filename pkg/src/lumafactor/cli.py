"""``lumafactor`` command line: gen-data, train-prior, predict-2d, invert, relight, eval.

Exit codes: 0 success, 1 unexpected error, 2 configuration error,
3 missing input, 4 numerical failure.
"""
import argparse
import json
import logging
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import config as C

log = logging.getLogger("lumafactor")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 1, 2, 3, 4


class MissingInput(FileNotFoundError):
    pass


def _require(path, what):
    p = Path(path)
    if not p.exists():
        raise MissingInput(f"{what} not found: {p}")
    return p


def _limit(items, n):
    return items[:n] if n and n > 0 else items


def set_threads(n):
    if not n:
        return
    import numba
    import torch
    numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))
    torch.set_num_threads(int(n))


# ------------------------------------------------------------------ datasets

def dataset_dirs(path):
    """A dataset directory, or a parent holding several (one per object)."""
    p = _require(path, "dataset")
    if (p / "manifest.json").exists():
        return [p]
    subs = sorted(d for d in p.iterdir() if (d / "manifest.json").exists())
    if not subs:
        raise MissingInput(f"no manifest.json under {p}")
    return subs


def load_dataset(path):
    """``(mesh, views[(camera, x, stem, entry)], doc)`` for one dataset directory."""
    from .scene.io import read_manifest, read_obj, read_png
    p = _require(path, "dataset")
    _require(p / "manifest.json", "dataset manifest")
    doc, views = read_manifest(p / "manifest.json")
    mesh = read_obj(_require(p / "mesh.obj", "dataset mesh"))
    out = []
    for (cam, rel), entry in zip(views, doc["views"]):
        x = read_png(_require(p / rel, "view image"))
        stem = Path(rel).name.replace("_rgb.png", "")
        out.append((cam, x, stem, entry))
    return mesh, out, doc


def _gt_textures(ds):
    from .scene import TextureMap, read_pfm
    k_d = TextureMap(np.clip(read_pfm(_require(ds / "k_d.pfm", "ground-truth k_d")), 0, 1), "albedo")
    k_orm = TextureMap(np.clip(read_pfm(_require(ds / "k_orm.pfm", "ground-truth k_orm")), 0, 1), "orm")
    return k_d, k_orm


def _load_assets_dir(path):
    from .scene import EnvironmentMap, TextureMap, read_pfm
    p = _require(path, "asset checkpoint")
    k_d = TextureMap(np.clip(read_pfm(_require(p / "k_d.pfm", "checkpoint k_d")), 0, 1), "albedo")
    k_orm = TextureMap(np.clip(read_pfm(_require(p / "k_orm.pfm", "checkpoint k_orm")), 0, 1), "orm")
    env = EnvironmentMap(read_pfm(_require(p / "env.pfm", "checkpoint env")).astype(np.float64))
    return k_d, k_orm, env


def _novel_env(cfg, doc):
    from .datagen import procedural_env
    from .scene import EnvironmentMap, read_pfm
    if cfg["env"]:
        return EnvironmentMap(read_pfm(_require(cfg["env"], "relighting env")).astype(np.float64))
    h = doc.get("recipe", {}).get("env_height", 32)
    return procedural_env(np.random.default_rng([cfg["illuminant_seed"], 2]), h, cfg["env_scale"])


# ------------------------------------------------------------------ commands

def cmd_gen_data(cfg, out):
    from .datagen import random_recipe, render_dataset
    base = C.build_recipe(cfg["recipe"])
    count = cfg["count"]
    allowed = {"shape", "albedo_family", "orm_family", "illuminant"}
    bad = set(cfg["randomize"]) - allowed
    if bad:
        raise C.ConfigError(f"randomize: unknown field {sorted(bad)[0]!r}")
    for k in range(count):
        seed = base.seed + k
        fixed = {f: v for f, v in base.to_dict().items() if f not in cfg["randomize"] and f != "seed"}
        recipe = random_recipe(seed, **fixed)
        target = out if count == 1 else out / f"obj_{k:03d}"
        render_dataset(recipe, target)
        log.info("gen-data: wrote %s", target)


def cmd_train_prior(cfg, out):
    from .prior.training import load_triplets, train_denoiser, write_loss_curve
    dirs = []
    paths = cfg["datasets"] if isinstance(cfg["datasets"], list) else [cfg["datasets"]]
    for d in paths:
        dirs.extend(dataset_dirs(d))
    triplets = load_triplets(dirs)
    tcfg = C.build_train(cfg["train"])
    res = train_denoiser(triplets, tcfg, progress=lambda s, v: log.info("train-prior step %d loss %.5f", s, v))
    res.params.save(out / "prior.smat")
    write_loss_curve(out / "loss.csv", res.losses)


def cmd_predict_2d(cfg, out):
    from .prior import DenoiserParams, predict_materials
    from .scene.io import write_png
    params = DenoiserParams.load(_require(cfg["checkpoint"], "prior checkpoint"))
    _, views, _ = load_dataset(cfg["dataset"])
    (out / "views").mkdir(exist_ok=True)
    for cam, x, stem, _ in _limit(views, cfg["max_views"]):
        d, o = predict_materials(params, x, k=cfg["k"], seed=cfg["seed"], n_steps=cfg["n_steps"],
                                 guidance_scale=cfg["guidance_scale"])
        write_png(out / "views" / f"{stem}_albedo.png", d)
        write_png(out / "views" / f"{stem}_orm.png", o)


def _train_views(views):
    from .datagen import lights_from_dicts
    from .invrender import TrainView
    return [TrainView(x, cam, tuple(lights_from_dicts(e.get("lights", [])))) for cam, x, _, e in views]


def cmd_invert(cfg, out):
    from .invrender import optimize
    from .prior import DenoiserParams
    use_prior = cfg["use_prior"]
    prior = None
    if use_prior:
        if not cfg["checkpoint"]:
            raise C.ConfigError("missing required config value 'checkpoint' (or pass --no-prior)")
        prior = DenoiserParams.load(_require(cfg["checkpoint"], "prior checkpoint"))
    ocfg = C.build_optim(cfg, use_prior)
    mesh, views, _ = load_dataset(cfg["dataset"])
    views = _limit(views, cfg["max_views"])
    res = optimize(_train_views(views), mesh, ocfg, prior=prior, checkpoint_dir=out / "assets",
                   progress=lambda i, h: i % 100 == 0 and log.info(
                       "invert iter %d total %.5f recon %.5f", i, h["total"], h["l_recon"]))
    return res


def _relit_views(k_d, k_orm, mesh, env, views, cfg):
    from .invrender import relight
    from .renderer import RenderConfig
    out = []
    for idx, (cam, _, stem, _) in enumerate(views):
        rcfg = RenderConfig(spp=cfg["spp"], seed=cfg["seed"] + idx)
        out.append((stem, relight(k_d, k_orm, mesh, env, cam, rcfg)))
    return out


def cmd_relight(cfg, out):
    from .invrender import write_relit
    k_d, k_orm, _ = _load_assets_dir(cfg["assets"])
    mesh, views, doc = load_dataset(cfg["dataset"])
    env = _novel_env(cfg, doc)
    (out / "views").mkdir(exist_ok=True)
    for stem, rgb in _relit_views(k_d, k_orm, mesh, env, _limit(views, cfg["max_views"]), cfg):
        write_relit(out / "views" / f"{stem}_relit", rgb)


def cmd_eval(cfg, out):
    from .metrics import CSV_HEADER, evaluate
    from .renderer import render_aux, tonemap_srgb
    from .scene import EnvironmentMap, Scene
    from .scene.io import read_png
    ds = Path(cfg["dataset"])
    mesh, views, doc = load_dataset(ds)
    views = _limit(views, cfg["max_views"])
    gt_d, gt_o = _gt_textures(ds)
    if bool(cfg["assets"]) == bool(cfg["predictions"]):
        raise C.ConfigError("eval needs exactly one of 'assets' or 'predictions'")
    gts, preds = [], []
    # the aux buffers only fetch textures, so any environment will do
    env_black = EnvironmentMap(np.zeros((4, 8, 3)))
    if cfg["assets"]:
        k_d, k_orm, _ = _load_assets_dir(cfg["assets"])
        env = _novel_env(cfg, doc)
        relit_gt = _relit_views(gt_d, gt_o, mesh, env, views, cfg)
        relit_pr = _relit_views(k_d, k_orm, mesh, env, views, cfg)
        for (cam, _, stem, _), (_, rg), (_, rp) in zip(views, relit_gt, relit_pr):
            ag, og, _, mask, _ = render_aux(Scene(mesh, gt_d, gt_o, env_black), cam)
            ap, op, _, _, _ = render_aux(Scene(mesh, k_d, k_orm, env_black), cam)
            gts.append({"relit": tonemap_srgb(rg), "albedo": ag, "orm": og, "mask": mask})
            preds.append({"relit": tonemap_srgb(rp), "albedo": ap, "orm": op})
    else:
        pdir = _require(cfg["predictions"], "predictions directory")
        for cam, _, stem, _ in views:
            ag, og, _, mask, _ = render_aux(Scene(mesh, gt_d, gt_o, env_black), cam)
            gts.append({"albedo": ag, "orm": og, "mask": mask})
            preds.append({"albedo": read_png(_require(pdir / "views" / f"{stem}_albedo.png", "prediction")),
                          "orm": read_png(_require(pdir / "views" / f"{stem}_orm.png", "prediction"))})
    rep = evaluate(preds, gts, C.config_hash(cfg))
    (out / "report.json").write_text(rep.to_json())
    (out / "report.csv").write_text(CSV_HEADER + "\n" + rep.to_csv_row(cfg["method"]) + "\n")
    return rep


COMMAND_FUNCS = {
    "gen-data": cmd_gen_data,
    "train-prior": cmd_train_prior,
    "predict-2d": cmd_predict_2d,
    "invert": cmd_invert,
    "relight": cmd_relight,
    "eval": cmd_eval,
}


# ------------------------------------------------------------------ entry

def build_parser():
    p = argparse.ArgumentParser(prog="lumafactor",
                                description="Material recovery by inverse rendering with a learned material prior.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in C.COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config file (or a resolved.json from an earlier run)")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted override, value parsed as JSON; repeatable")
        s.add_argument("--out", help="output directory (overrides out_dir)")
        s.add_argument("--threads", type=int, default=None,
                       help="cap renderer/eval threads (default: $LUMAFACTOR_THREADS or all cores)")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "invert":
            s.add_argument("--no-prior", action="store_true", help="disable distillation (baseline)")
    return p


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    command = args.command
    try:
        doc = C.load_config_file(args.config, command) if args.config else {}
        overrides = list(args.set)
        if args.out:
            overrides.append({"out_dir": args.out})
        if command == "invert" and args.no_prior:
            overrides.append({"use_prior": False})
        cfg = C.resolve(command, doc, overrides)
    except C.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing input: config file {exc.filename}", file=sys.stderr)
        return EXIT_MISSING

    threads = args.threads or int(os.environ.get("LUMAFACTOR_THREADS", "0") or 0)
    set_threads(threads)

    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    failed = out / "FAILED"
    if failed.exists():
        failed.unlink()
    (out / "resolved.json").write_text(json.dumps(C.resolved_document(command, cfg), indent=2, sort_keys=True))

    code, message = _dispatch(command, cfg, out)
    if code != EXIT_OK:
        failed.write_text(message + "\n")
        print(message, file=sys.stderr)
    return code


def _dispatch(command, cfg, out):
    from .invrender import NumericalFailure
    from .prior.training import TrainingDivergedError
    from .sds import SdsError
    try:
        COMMAND_FUNCS[command](cfg, out)
        return EXIT_OK, ""
    except C.ConfigError as exc:
        return EXIT_CONFIG, f"config error: {exc}"
    except (MissingInput, FileNotFoundError) as exc:
        return EXIT_MISSING, f"missing input: {exc}"
    except (NumericalFailure, TrainingDivergedError, SdsError, FloatingPointError) as exc:
        return EXIT_NUMERIC, f"numerical failure: {exc}"
    except Exception as exc:  # noqa: BLE001 - report and mark the run failed
        log.debug("%s", traceback.format_exc())
        return EXIT_ERROR, f"error: {type(exc).__name__}: {exc}"


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
