"""Command-line entry point.

Every subcommand resolves its options as defaults < ``--config`` JSON file <
command-line flags, and writes the resolved set next to its outputs so a run
can be repeated with ``--config <that file>``.

Exit codes: 0 success, 1 user error (bad input, flags or files), 2 internal
or numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .flowtrain import TRAIN_PRESETS, TrainConfig, Trainer
from .metrics import evaluate_reconstruction
from .numerics import Rng
from .prior import Prior, PriorConfig, PriorTrainConfig, best_of_n, read_token_file, train_prior, write_token_file
from .sampler import SAMPLER_PRESETS, SamplerConfig
from .structio import (
    BackboneStructure,
    DatasetManifest,
    IngestConfig,
    ingest_directory,
    load_structures,
    read_pdb,
    write_pdb,
)
from .synth import synthetic_dataset
from .tokenizer import ConfigMismatchError, Tokenizer, TokenizerConfig, decode_codes, preset, reconstruct

log = logging.getLogger("flowtok")

CONFIG_NAME = "config.json"


class UserError(Exception):
    """Bad flags, files or inputs; reported without a traceback."""


class StageError(Exception):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


# -- config resolution ------------------------------------------------------------

def _field_names(cls) -> list[str]:
    return [f.name for f in fields(cls)]


def _read_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UserError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UserError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise UserError(f"config file {path} must hold a JSON object")
    return d


def resolve(defaults: dict, args: argparse.Namespace, extra_keys=()) -> dict:
    """Merge defaults < config file < flags; unknown file keys are errors."""
    allowed = set(defaults) | set(extra_keys)
    from_file = _read_config_file(getattr(args, "config", None))
    unknown = sorted(set(from_file) - allowed)
    if unknown:
        raise UserError(f"unknown config keys: {unknown}")
    out = dict(defaults)
    out.update(from_file)
    for key in allowed:
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    return out


def write_config(directory: Path, cfg: dict, name: str = CONFIG_NAME) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / name
    path.write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return path


def _sidecar(path: Path) -> tuple[Path, str]:
    return path.parent, f"{path.name}.config.json"


def _tokenizer_and_train_configs(cfg: dict) -> tuple[dict, dict]:
    tok = preset(cfg["preset"]).to_dict()
    train = TRAIN_PRESETS[cfg["train_preset"]].to_dict()
    for k in tok:
        if k in cfg:
            tok[k] = cfg[k]
    for k in train:
        if k in cfg:
            train[k] = cfg[k]
    return tok, train


# -- data loading -------------------------------------------------------------------

def load_inputs(path, ca_only: bool = True) -> list[BackboneStructure]:
    """Structures from a manifest JSON or from every ``*.pdb`` in a directory."""
    p = Path(path)
    if not p.exists():
        raise UserError(f"input not found: {p}")
    if p.is_file() and p.suffix == ".json":
        manifest = DatasetManifest.from_json(p.read_text())
        for e in manifest.entries:
            if e.path and not Path(e.path).is_absolute():
                e.path = str(p.parent / e.path)
        return load_structures(manifest, ca_only=ca_only)
    files = [p] if p.is_file() else sorted(p.glob("*.pdb"))
    if not files:
        raise UserError(f"no .pdb files in {p}")
    out = []
    for f in files:
        res = read_pdb(f, ca_only=ca_only)
        if not ca_only and res.dropped and not res.structures:
            # a Cα-only file read for a full-backbone model
            raise ConfigMismatchError(f"config mismatch: model expects N, CA, C per residue but {f.name} lacks backbone atoms")
        out.extend(res.structures)
    if not out:
        raise UserError(f"no usable chains in {p}")
    return sorted(out, key=lambda s: s.id)


def _write_structures(directory: Path, structures) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for s in structures:
        (directory / f"{s.id}.pdb").write_bytes(write_pdb(s))


# -- subcommands --------------------------------------------------------------------------

SYNTH_DEFAULTS = {"kind": "any", "n": 5, "min_len": 24, "max_len": 64, "seed": 0, "atoms": 1}


def cmd_synth(args) -> int:
    cfg = resolve(SYNTH_DEFAULTS, args)
    if cfg["n"] < 1:
        raise UserError("n must be >= 1")
    if not 1 <= cfg["min_len"] <= cfg["max_len"]:
        raise UserError("need 1 <= min_len <= max_len")
    kinds = ("helix", "sheet", "mixed") if cfg["kind"] == "any" else (cfg["kind"],)
    ds = synthetic_dataset(cfg["n"], cfg["seed"], cfg["min_len"], cfg["max_len"], kinds=kinds, num_atoms=cfg["atoms"])
    out = Path(args.out)
    _write_structures(out, ds)
    write_config(out, cfg)
    log.info("wrote %d structures to %s", len(ds), out)
    return 0


def cmd_ingest(args) -> int:
    defaults = IngestConfig().__dict__.copy()
    cfg = resolve(defaults, args)
    icfg = IngestConfig(**cfg)
    src = Path(args.input)
    if not src.is_dir():
        raise UserError(f"input directory not found: {src}")
    manifest = ingest_directory(src, icfg, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    # relative paths keep the manifest valid when the run directory moves
    for e in manifest.entries:
        if e.path:
            e.path = os.path.relpath(e.path, out)
    (out / "manifest.json").write_text(manifest.to_json())
    write_config(out, cfg)
    log.info("retained %d of %d chains", len(manifest.retained()), len(manifest.entries))
    return 0


TRAIN_TOK_DEFAULTS = {"preset": "small", "train_preset": "small", "steps": 2000}
_TOK_KEYS = _field_names(TokenizerConfig)
_TRAIN_KEYS = _field_names(TrainConfig)


def cmd_train_tokenizer(args) -> int:
    cfg = resolve(TRAIN_TOK_DEFAULTS, args, extra_keys=_TOK_KEYS + _TRAIN_KEYS)
    tok_d, train_d = _tokenizer_and_train_configs(cfg)
    try:
        tok_cfg = TokenizerConfig.from_dict(tok_d)
        train_cfg = TrainConfig.from_dict(train_d)
    except (TypeError, ValueError) as exc:
        raise UserError(str(exc)) from None
    structures = load_inputs(args.data, ca_only=tok_cfg.atoms == 1)
    too_long = [s.id for s in structures if len(s) > tok_cfg.max_len]
    if too_long:
        raise UserError(f"chains longer than max_len={tok_cfg.max_len}: {too_long[:5]}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    effective = {**cfg, **tok_d, **train_d}
    write_config(out, effective)
    log_path = out / "train_log.jsonl"
    log_path.write_text("")
    model = Tokenizer(tok_cfg, dtype=np.dtype(train_cfg.dtype))
    trainer = Trainer(model, [s.coords for s in structures], train_cfg, log_path=log_path)
    every = max(1, cfg["steps"] // 10)

    def progress(rec):
        if (rec["step"] + 1) % every == 0:
            log.info("step %d loss %.4f", rec["step"] + 1, rec["loss"])

    trainer.run(cfg["steps"], progress)
    model.save(out / "tokenizer.ckpt", meta={"train": train_d, "steps": cfg["steps"]})
    return 0


def _load_tokenizer(path) -> Tokenizer:
    p = Path(path)
    if not p.is_file():
        raise UserError(f"checkpoint not found: {p}")
    return Tokenizer.load(p)


def cmd_tokenize(args) -> int:
    cfg = resolve({}, args)
    model = _load_tokenizer(args.checkpoint)
    structures = load_inputs(args.data, ca_only=model.config.atoms == 1)
    for s in structures:
        if s.num_atoms != model.config.atoms:
            raise ConfigMismatchError(
                f"config mismatch: checkpoint expects {model.config.atoms} atoms per residue, {s.id} has {s.num_atoms}"
            )
    records = [(s.id, model.tokenize(s.coords).tolist()) for s in structures]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_token_file(out, records)
    d, name = _sidecar(out)
    write_config(d, {**cfg, "checkpoint": str(args.checkpoint), "data": str(args.data)}, name)
    log.info("wrote %d token records to %s", len(records), out)
    return 0


PRIOR_DEFAULTS = {"steps": 500, "dtype": "float32"}
_PRIOR_KEYS = [k for k in _field_names(PriorConfig)]
_PRIOR_TRAIN_KEYS = [k for k in _field_names(PriorTrainConfig) if k != "seed"]


def cmd_train_prior(args) -> int:
    cfg = resolve(PRIOR_DEFAULTS, args, extra_keys=_PRIOR_KEYS + _PRIOR_TRAIN_KEYS)
    records = read_token_file(args.tokens)
    if not records:
        raise UserError(f"no token records in {args.tokens}")
    pc = {k: cfg[k] for k in _PRIOR_KEYS if k in cfg}
    tc = {k: cfg[k] for k in _PRIOR_TRAIN_KEYS if k in cfg}
    if "seed" in cfg:
        tc["seed"] = cfg["seed"]
    try:
        prior_cfg = PriorConfig(**pc)
        train_cfg = PriorTrainConfig.from_dict(tc)
    except (TypeError, ValueError) as exc:
        raise UserError(str(exc)) from None
    longest = max(len(c) for _, c in records)
    if longest > prior_cfg.max_len - 2:
        raise UserError(f"token sequence of length {longest} exceeds prior max_len - 2 = {prior_cfg.max_len - 2}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(out, {**cfg, **prior_cfg.to_dict(), **train_cfg.to_dict()})
    log_path = out / "prior_log.jsonl"
    log_path.write_text("")
    model = Prior(prior_cfg, dtype=np.dtype(cfg["dtype"]))
    train_prior(model, [c for _, c in records], train_cfg, cfg["steps"], log_path=log_path)
    model.save(out / "prior.ckpt")
    return 0


SAMPLER_DEFAULTS = {"sampler": "euler", **{k: None for k in _field_names(SamplerConfig)}}


def _sampler_config(cfg: dict) -> SamplerConfig:
    name = cfg.get("sampler", "euler")
    if name not in SAMPLER_PRESETS:
        raise UserError(f"unknown sampler preset {name!r}; choose from {sorted(SAMPLER_PRESETS)}")
    over = {k: cfg[k] for k in _field_names(SamplerConfig) if cfg.get(k) is not None}
    try:
        return SAMPLER_PRESETS[name].replace(**over)
    except ValueError as exc:
        raise UserError(str(exc)) from None


def _resolved_sampler(cfg: dict, scfg: SamplerConfig) -> dict:
    return {**cfg, **scfg.to_dict()}


def cmd_reconstruct(args) -> int:
    cfg = resolve(SAMPLER_DEFAULTS, args)
    scfg = _sampler_config(cfg)
    model = _load_tokenizer(args.checkpoint)
    structures = load_inputs(args.data, ca_only=model.config.atoms == 1)
    base = Rng(scfg.seed)
    outs = [reconstruct(model, s, scfg, rng=base.spawn(i)) for i, s in enumerate(structures)]
    out = Path(args.out)
    _write_structures(out, outs)
    (out / "sampler.json").write_text(scfg.to_json())
    write_config(out, {**_resolved_sampler(cfg, scfg), "checkpoint": str(args.checkpoint), "data": str(args.data)})
    log.info("reconstructed %d structures into %s", len(outs), out)
    return 0


SAMPLE_DEFAULTS = {**SAMPLER_DEFAULTS, "n": 4, "top_p": None, "min_p": None, "best_of": None}


def cmd_sample(args) -> int:
    cfg = resolve(SAMPLE_DEFAULTS, args)
    scfg = _sampler_config(cfg)
    model = _load_tokenizer(args.checkpoint)
    pp = Path(args.prior)
    if not pp.is_file():
        raise UserError(f"prior checkpoint not found: {pp}")
    prior = Prior.load(pp)
    if prior.config.codebook_size != model.config.codebook_size:
        raise ConfigMismatchError(
            f"config mismatch: prior codebook {prior.config.codebook_size} vs tokenizer {model.config.codebook_size}"
        )
    over = {k: cfg[k] for k in ("top_p", "min_p", "best_of") if cfg.get(k) is not None}
    pcfg = prior.config.replace(max_len=min(prior.config.max_len, model.config.max_len + 2), **over)
    base = Rng(scfg.seed)
    records, structures = [], []
    for i in range(cfg["n"]):
        g = best_of_n(prior, pcfg, base.spawn(2 * i))
        sid = f"gen_{i:04d}"
        coords = decode_codes(model, g.codes, scfg, rng=base.spawn(2 * i + 1))
        records.append((sid, g.codes.tolist()))
        structures.append(BackboneStructure(id=sid, coords=coords))
    out = Path(args.out)
    _write_structures(out, structures)
    write_token_file(out / "tokens.tsv", records)
    (out / "sampler.json").write_text(scfg.to_json())
    write_config(out, {**_resolved_sampler(cfg, scfg), **{k: getattr(pcfg, k) for k in ("top_p", "min_p", "best_of", "max_len")}})
    return 0


EVAL_DEFAULTS = {"extractor": "geo-v1"}


def cmd_eval(args) -> int:
    cfg = resolve(EVAL_DEFAULTS, args)
    truth = load_inputs(args.truth)
    pred = load_inputs(args.pred)
    reference = load_inputs(args.reference) if args.reference else None
    sampler = None
    side = Path(args.pred) / "sampler.json"
    if side.is_file():
        sampler = json.loads(side.read_text())
    try:
        report = evaluate_reconstruction(truth, pred, cfg["extractor"], sampler=sampler, reference=reference, threads=args.threads)
    except ValueError as exc:
        raise UserError(str(exc)) from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    d, name = _sidecar(out)
    write_config(d, {**cfg, "truth": str(args.truth), "pred": str(args.pred)}, name)
    agg = report.aggregates()
    log.info("n=%d rmsd_mean=%s tm_mean=%s", agg["n"], agg.get("rmsd_mean"), agg.get("tm_mean"))
    return 0


# -- end to end -------------------------------------------------------------------------------

PROFILES = {
    # five synthetic chains, default-small tokenizer, 2k optimizer steps
    "smoke": {
        "n": 5, "min_len": 24, "max_len": 32, "preset": "small", "train_preset": "small",
        "steps": 2000, "prior_steps": 300, "samples": 4, "sampler_steps": 100, "dtype": "float32",
    },
    # seconds-scale run for tests and determinism checks
    "ci": {
        "n": 5, "min_len": 10, "max_len": 14, "preset": "tiny", "train_preset": "small",
        "steps": 20, "prior_steps": 20, "samples": 2, "sampler_steps": 10, "dtype": "float64",
    },
}
REPORT_DEFAULTS = {"profile": "smoke", "seed": 0, **{k: None for k in PROFILES["smoke"]}}


def _stage(name: str, fn, ns: argparse.Namespace) -> None:
    log.info("== %s", name)
    try:
        code = fn(ns)
    except (UserError, StageError):
        raise
    except Exception as exc:  # noqa: BLE001
        raise StageError(name, exc) from exc
    if code:
        raise StageError(name, RuntimeError(f"exit code {code}"))


def cmd_report(args) -> int:
    cfg = resolve(REPORT_DEFAULTS, args)
    if cfg["profile"] not in PROFILES:
        raise UserError(f"unknown profile {cfg['profile']!r}; choose from {sorted(PROFILES)}")
    for k, v in PROFILES[cfg["profile"]].items():
        if cfg.get(k) is None:
            cfg[k] = v
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(out, cfg)
    seed, threads = cfg["seed"], args.threads

    def ns(**kw):
        return argparse.Namespace(config=None, threads=threads, **kw)

    _stage("synth", cmd_synth, ns(out=out / "data", kind="any", n=cfg["n"], min_len=cfg["min_len"], max_len=cfg["max_len"], seed=seed, atoms=1))
    _stage("ingest", cmd_ingest, ns(input=out / "data", out=out / "ingest", plddt_filter=None))
    _stage(
        "train-tokenizer",
        cmd_train_tokenizer,
        ns(data=out / "ingest" / "manifest.json", out=out / "tokenizer", preset=cfg["preset"], train_preset=cfg["train_preset"],
           steps=cfg["steps"], seed=seed, dtype=cfg["dtype"]),
    )
    ckpt = out / "tokenizer" / "tokenizer.ckpt"
    _stage("tokenize", cmd_tokenize, ns(checkpoint=ckpt, data=out / "ingest" / "manifest.json", out=out / "tokens" / "tokens.tsv"))
    prior_over = {"layers": 2, "width": 64, "heads": 4} if cfg["preset"] == "tiny" else {}
    _stage(
        "train-prior",
        cmd_train_prior,
        ns(tokens=out / "tokens" / "tokens.tsv", out=out / "prior", steps=cfg["prior_steps"], seed=seed, dtype=cfg["dtype"], **prior_over),
    )
    sampler = dict(sampler="euler", steps=cfg["sampler_steps"], seed=seed)
    _stage("reconstruct", cmd_reconstruct, ns(checkpoint=ckpt, data=out / "ingest" / "manifest.json", out=out / "recon", **sampler))
    _stage("sample", cmd_sample, ns(checkpoint=ckpt, prior=out / "prior" / "prior.ckpt", out=out / "samples", n=cfg["samples"], **sampler))
    _stage("eval", cmd_eval, ns(truth=out / "data", pred=out / "recon", out=out / "report.json", csv=out / "report.csv", reference=None))
    log.info("report written to %s", out / "report.json")
    return 0


# -- parser ------------------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are user errors (exit 1)
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_sampler_flags(p) -> None:
    p.add_argument("--sampler", choices=sorted(SAMPLER_PRESETS), help="named sampler preset (default euler)")
    p.add_argument("--steps", type=int, help="integration steps")
    p.add_argument("--guidance", type=float, help="classifier-free guidance strength")
    p.add_argument("--eta", type=float, help="score-drift scale")
    p.add_argument("--gamma", type=float, help="Langevin noise scale")
    p.add_argument("--gt-mode", dest="gt_mode", choices=["constant", "linear"])
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option values (flags take precedence)")
    common.add_argument("--threads", type=int, default=1, help="cap on worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="flowtok", description="Protein backbone tokenizer pipeline.")
    parser.add_argument("--version", action="version", version=f"flowtok {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write idealized synthetic backbones")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["helix", "sheet", "mixed", "any"])
    p.add_argument("--n", type=int)
    p.add_argument("--min-len", dest="min_len", type=int)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--atoms", type=int, choices=[1, 3])
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="parse and filter a PDB directory into a manifest")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--full-backbone", dest="ca_only", action="store_const", const=False)
    p.add_argument("--no-coil-filter", dest="coil_filter", action="store_const", const=False)
    p.add_argument("--no-plddt-filter", dest="plddt_filter", action="store_const", const=False)
    p.add_argument("--split")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-tokenizer", parents=[common], help="train the flow-matching tokenizer")
    p.add_argument("--data", required=True, help="manifest.json or a directory of PDB files")
    p.add_argument("--out", required=True)
    p.add_argument("--preset")
    p.add_argument("--train-preset", dest="train_preset")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--grad-accum", dest="grad_accum", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.set_defaults(func=cmd_train_tokenizer)

    p = sub.add_parser("tokenize", parents=[common], help="encode structures to code sequences")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("train-prior", parents=[common], help="train the autoregressive token prior")
    p.add_argument("--tokens", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.set_defaults(func=cmd_train_prior)

    p = sub.add_parser("reconstruct", parents=[common], help="tokenize and decode structures")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_sampler_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("sample", parents=[common], help="generate new backbones from the prior")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--top-p", dest="top_p", type=float)
    p.add_argument("--min-p", dest="min_p", type=float)
    p.add_argument("--best-of", dest="best_of", type=int)
    _add_sampler_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", parents=[common], help="score reconstructions against the inputs")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--extractor")
    p.add_argument("--csv")
    p.add_argument("--reference", help="reference set for novelty")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="run the whole pipeline on a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, help="tokenizer optimizer steps")
    p.add_argument("--prior-steps", dest="prior_steps", type=int)
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.set_defaults(func=cmd_report)
    return parser


_USER_ERRORS = (UserError, ConfigMismatchError, FileNotFoundError, KeyError, ValueError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except StageError as exc:
        log.error("%s", exc)
        if args.verbose:
            traceback.print_exception(exc.cause)
        return 1 if isinstance(exc.cause, _USER_ERRORS) else 2
    except ArithmeticError as exc:  # non-finite losses, sampler blow-ups, Fréchet failures
        log.error("numerical failure: %s", exc)
        return 2
    except _USER_ERRORS as exc:
        log.error("%s", exc.args[0] if isinstance(exc, KeyError) and exc.args else exc)
        return 1
    except Exception:  # noqa: BLE001
        log.error("internal error\n%s", traceback.format_exc())
        return 2


if __name__ == "__main__":
    sys.exit(main())
