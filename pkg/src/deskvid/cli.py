"""Command-line entry point.

Every subcommand reads an optional YAML config (``--config``) whose top level may
hold ``seed`` and ``out`` plus one mapping per subcommand name; explicit flags
override the file. The seed falls back to the ``OS2_SEED`` environment variable.

Exit codes: 64 usage error, 65 bad config, 66 missing input, 70 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
import zlib
from dataclasses import asdict, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from . import __version__

EX_USAGE, EX_CONFIG, EX_NOINPUT, EX_NUMERIC = 64, 65, 66, 70


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(EX_USAGE, f"{self.prog}: {message}")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named consumer of the run seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),)))


# ------------------------------------------------------------------ plumbing


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise CliError(EX_NOINPUT, f"config file not found: {path}")
    try:
        cfg = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as e:
        raise CliError(EX_CONFIG, f"cannot parse {path}: {e}") from e
    if not isinstance(cfg, dict):
        raise CliError(EX_CONFIG, f"{path}: top level must be a mapping")
    return cfg


class Options:
    """Flag value if given, else the config section's value, else the default."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self.args = args
        section = config.get(args.command, {}) or {}
        if not isinstance(section, dict):
            raise CliError(EX_CONFIG, f"config section {args.command!r} must be a mapping")
        self.section = {k.replace("-", "_"): v for k, v in section.items()}
        self.config = config

    def get(self, name: str, default=None):
        v = getattr(self.args, name, None)
        if v is not None:
            return v
        return self.section.get(name, default)

    @property
    def seed(self) -> int:
        v = self.get("seed")
        if v is None:
            v = self.config.get("seed")
        if v is None:
            v = os.environ.get("OS2_SEED", 0)
        try:
            return int(v)
        except (TypeError, ValueError) as e:
            raise CliError(EX_CONFIG, f"seed must be an integer, got {v!r}") from e

    @property
    def out(self) -> Path:
        out = Path(self.get("out") or self.config.get("out") or "out")
        out.mkdir(parents=True, exist_ok=True)
        return out


def _require(path, what: str) -> Path:
    if path is None:
        raise CliError(EX_NOINPUT, f"missing required input: {what}")
    p = Path(path)
    if not p.exists():
        raise CliError(EX_NOINPUT, f"{what} not found: {p}")
    return p


def _int_list(text) -> list[int]:
    if text is None:
        return []
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).replace(" ", "").split(",") if x]


def _float_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).replace(" ", "").split(",") if x]


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return path


def _write_csv(path: Path, rows: Sequence[dict], columns: Sequence[str]) -> Path:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


def _finite(arr: np.ndarray, what: str) -> np.ndarray:
    from .tensor import NonFiniteError

    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return arr


def _build(cls, mapping: Optional[dict], what: str):
    if mapping is None:
        return cls()
    if not isinstance(mapping, dict):
        raise CliError(EX_CONFIG, f"{what} must be a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(mapping) - names
    if unknown:
        raise CliError(EX_CONFIG, f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**mapping)
    except (TypeError, ValueError) as e:
        raise CliError(EX_CONFIG, f"bad {what}: {e}") from e


# ------------------------------------------------------------------ commands


def cmd_token_count(o: Options) -> int:
    from .dcae import SPECS, token_count

    spec_name = o.get("spec", "hunyuan")
    if spec_name not in SPECS:
        raise CliError(EX_CONFIG, f"unknown spec {spec_name!r}; choose from {sorted(SPECS)}")
    size = o.get("size")
    h = o.get("height", size)
    w = o.get("width", size)
    frames = o.get("frames")
    if frames is None or h is None or w is None:
        raise CliError(EX_USAGE, "token-count needs --frames and --size (or --height and --width)")
    try:
        print(token_count(int(frames), int(h), int(w), SPECS[spec_name]))
    except ValueError as e:
        raise CliError(EX_CONFIG, str(e)) from e
    return 0


def _stage_specs(o: Options):
    from .sched import REFERENCE_STAGES, StageSpec

    stages = o.get("stages", "reference")
    price = o.get("price")
    if stages == "reference":
        specs = list(REFERENCE_STAGES)
    elif isinstance(stages, list):
        specs = [_build(StageSpec, s, "stage") for s in stages]
    else:
        raise CliError(EX_CONFIG, "stages must be 'reference' or a list of stage mappings in the config file")
    if price is not None:
        specs = [StageSpec(**{**asdict(s), "price_per_gpu_hour": float(price)}) for s in specs]
    return specs


def cmd_cost(o: Options) -> int:
    from .plotting import cost_figure
    from .sched import cost_table

    rows = cost_table(_stage_specs(o))
    out = o.out
    cols = ["stage", "dataset", "cp", "iterations", "gpus", "gpu_days", "usd", "usd_k"]
    _write_csv(out / "cost.csv", rows, cols)
    _write_json(out / "cost.json", rows)
    cost_figure(rows, out / "cost.png")
    for r in rows:
        print(f"{r['stage']:<14} {r['gpu_days']:>7g} GPU-days  ${r['usd']:>10,.0f}  {r['usd_k']}")
    return 0


def cmd_batch_search(o: Options) -> int:
    from .plotting import batch_size_figure
    from .sched import LinearCostModel, search_batch_sizes

    tokens = o.get("tokens")
    if tokens is None:
        raise CliError(EX_USAGE, "batch-search needs --tokens")
    tokens = _float_list(tokens)
    model_cfg = dict(o.section.get("model", {}) or {})
    for k in ("memory_cap", "mem_per_token", "quad"):
        v = getattr(o.args, k, None)
        if v is not None:
            model_cfg[k] = v
    model_cfg.setdefault("memory_cap", 10 * max(tokens))
    model = _build(LinearCostModel, model_cfg, "cost model")
    try:
        res = search_batch_sizes(tokens, model, int(o.get("max_batch", 512)), int(o.get("cp", 1)))
    except ValueError as e:
        raise CliError(EX_CONFIG, str(e)) from e
    rows = [{"tokens": t, "batch_size": b, "binding": c} for t, b, c in
            zip(_float_list(tokens), res.batch_sizes, res.binding)]
    out = o.out
    _write_csv(out / "batch_sizes.csv", rows, ["tokens", "batch_size", "binding"])
    _write_json(out / "batch_sizes.json", {"reference_index": res.reference_index, "rows": rows, "model": asdict(model)})
    batch_size_figure([r["tokens"] for r in rows], res.batch_sizes, out / "batch_sizes.png")
    for r in rows:
        print(f"{r['tokens']:>10g} tokens  batch {r['batch_size']:>4d}  ({r['binding']})")
    return 0


def _buckets(o: Options):
    from .sched import STAGE3_BUCKETS, STAGE12_BUCKETS, Bucket, bucket_token_cap

    custom = o.section.get("buckets")
    if custom:
        out = []
        for b in custom:
            b = dict(b)
            b.setdefault("token_cap", bucket_token_cap(b["frame_hi"], b["resolution"]))
            out.append(_build(Bucket, b, "bucket"))
        return out
    stage = int(o.get("stage", 1))
    if stage not in (1, 2, 3):
        raise CliError(EX_CONFIG, f"stage must be 1, 2 or 3, got {stage}")
    return STAGE3_BUCKETS if stage == 3 else STAGE12_BUCKETS


def cmd_bucket_plan(o: Options) -> int:
    from .sched import plan_batches

    path = _require(o.get("samples"), "samples JSONL")
    samples = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
    try:
        batches, rejected = plan_batches(samples, _buckets(o), o.seed)
    except (KeyError, ValueError) as e:
        raise CliError(EX_CONFIG, f"bad samples or buckets: {e}") from e
    out = o.out
    with open(out / "plan.jsonl", "w") as f:
        for b in batches:
            f.write(json.dumps(b, sort_keys=True) + "\n")
    with open(out / "plan_rejected.jsonl", "w") as f:
        for r in rejected:
            f.write(json.dumps(r, sort_keys=True) + "\n")
    print(f"{len(batches)} batches, {len(rejected)} samples rejected -> {out / 'plan.jsonl'}")
    return 0


def _filter_config(o: Options):
    from .datapipe import FilterConfig

    fc = o.config.get("filter_config")
    if fc is None:
        return FilterConfig()
    try:
        return FilterConfig.from_dict(fc)
    except (TypeError, ValueError) as e:
        raise CliError(EX_CONFIG, f"bad filter_config: {e}") from e


def _metadata_path(o: Options) -> Path:
    meta = o.get("metadata")
    if meta is None and o.get("corpus") is not None:
        meta = Path(o.get("corpus")) / "metadata.jsonl"
    return _require(meta, "--metadata or --corpus")


def cmd_filter(o: Options) -> int:
    from .datapipe import curate

    config = _filter_config(o)
    tier = int(o.get("tier", len(config.tiers)))
    if not 1 <= tier <= len(config.tiers):
        raise CliError(EX_CONFIG, f"tier must be in [1, {len(config.tiers)}]")
    res = curate(_metadata_path(o), config)
    out = o.out
    with open(out / "records.jsonl", "w") as f:
        for r in res.records:
            f.write(r.to_json() + "\n")
    with open(out / "rejected.jsonl", "w") as f:
        for r in res.rejected:
            f.write(json.dumps(r, sort_keys=True) + "\n")
    for k in range(1, len(config.tiers) + 1):
        (out / f"tier{k}.txt").write_text("".join(i + "\n" for i in res.tier_ids(k)))
    kept = res.tier_ids(tier)
    print(f"admitted {len(res.records)} segments, rejected {len(res.rejected)} clips; tier {tier} keeps {len(kept)}")
    print(f"ids -> {out / f'tier{tier}.txt'}")
    return 0


def cmd_stats(o: Options) -> int:
    from .datapipe import ClipRecord, curate, stats_report
    from .plotting import stats_figure

    if o.get("records") is not None:
        path = _require(o.get("records"), "records JSONL")
        records = [ClipRecord(**json.loads(line)) for line in path.read_text().splitlines() if line.strip()]
    else:
        records = curate(_metadata_path(o), _filter_config(o)).records
    if not records:
        raise CliError(EX_NOINPUT, "no records to summarize")
    report = stats_report(records)
    out = o.out
    _write_json(out / "stats.json", report)
    rows = []
    for name in ("aesthetic", "duration", "aspect", "caption_words"):
        h = report[name]
        for lo, hi, c in zip(h["edges"], h["edges"][1:], h["counts"]):
            rows.append({"attribute": name, "lo": lo, "hi": hi, "count": c})
    _write_csv(out / "stats.csv", rows, ["attribute", "lo", "hi", "count"])
    _write_csv(out / "word_frequency.csv", [{"word": w, "count": c} for w, c in report["word_frequency"]], ["word", "count"])
    stats_figure(report, out / "stats.png")
    print(f"{report['count']} clips; {report['caption_words']['fraction_over_75']:.1%} of captions exceed 75 words")
    print(f"report -> {out / 'stats.json'}")
    return 0


def cmd_synth_corpus(o: Options) -> int:
    from .synth import make_corpus

    out = o.out
    clips = make_corpus(out, int(o.get("clips", 60)), o.seed)
    print(f"{len(clips)} clips -> {out / 'metadata.jsonl'}")
    return 0


def _model_config(o: Options, channels: int):
    from .mmdit import ModelConfig
    from .toyvideo import tiny_config

    base = asdict(tiny_config(channels))
    base.update(o.config.get("model", {}) or {})
    for k in ("patch", "rope_split"):
        if base.get(k) is not None:
            base[k] = tuple(base[k])
    return _build(ModelConfig, base, "model config")


def cmd_train_toy(o: Options) -> int:
    from .manifest import save_weights
    from .plotting import loss_figure
    from .toyvideo import train_toy

    frames, hw = int(o.get("frames", 2)), int(o.get("hw", 8))
    config = _model_config(o, 1)
    t0 = time.perf_counter()
    res = train_toy(config, steps=int(o.get("steps", 300)), batch=int(o.get("batch", 8)),
                    lr=float(o.get("lr", 3e-3)), seed=o.seed, frames=frames, hw=hw)
    out = o.out
    wdir = out / "weights"
    save_weights(wdir, res.model.weights)
    _write_json(wdir / "model.json", {"model": asdict(config), "frames": frames, "hw": hw})
    _write_csv(out / "losses.csv", [{"step": i + 1, "loss": l, "grad_norm": g}
                                    for i, (l, g) in enumerate(zip(res.losses, res.grad_norms))],
               ["step", "loss", "grad_norm"])
    _write_json(out / "train.json", {"eval_before": res.eval_before, "eval_after": res.eval_after,
                                     "reduction": res.reduction, "steps": len(res.losses)})
    loss_figure(res.losses, out / "loss.png")
    print(f"eval loss {res.eval_before:.4f} -> {res.eval_after:.4f} ({res.reduction:.1%} lower) "
          f"in {time.perf_counter() - t0:.1f}s; weights -> {wdir}")
    return 0


def _load_model(o: Options):
    from .manifest import load_weights
    from .mmdit import MMDiT, ModelConfig
    from .tensor import Tensor

    wdir = _require(o.get("weights"), "--weights directory")
    meta_path = _require(wdir / "model.json", "model.json in weights directory")
    meta = json.loads(meta_path.read_text())
    cfg = dict(meta["model"])
    for k in ("patch", "rope_split"):
        if cfg.get(k) is not None:
            cfg[k] = tuple(cfg[k])
    config = _build(ModelConfig, cfg, "stored model config")
    try:
        arrays = load_weights(wdir)
    except ValueError as e:
        raise CliError(EX_CONFIG, str(e)) from e
    return MMDiT(config, {k: Tensor(v) for k, v in arrays.items()}), meta


def _guidance(o: Options, mode_default: str):
    from .guidance import GuidanceConfig

    g = dict(o.config.get("guidance", {}) or {})
    for k in ("g_img", "g_txt", "mode", "oscillation", "warmup_steps", "dynamic", "steps"):
        v = getattr(o.args, k, None)
        if v is not None:
            g[k] = v
    g.setdefault("mode", mode_default)
    g.setdefault("warmup_steps", min(10, int(g.get("steps", 50))))
    return _build(GuidanceConfig, g, "guidance config")


def _sample(o: Options, image: bool) -> int:
    from .condition import ConditionSpec, append_motion_score, build_condition_input, first_frame
    from .flow import euler_sample
    from .guidance import guided_velocity, schedule_grid
    from .plotting import frames_figure, guidance_figure
    from .toyvideo import moving_square

    model, meta = _load_model(o)
    gcfg = _guidance(o, "decoupled" if image else "single")
    frames, hw = meta["frames"], meta["hw"]
    k = model.config.out_channels
    direction = o.get("direction", "right")
    speed = int(o.get("speed", 1))
    caption = o.get("caption") or append_motion_score(f"a square moving {direction}", speed)
    rng = substream(o.seed, "sample")
    x1 = rng.standard_normal((k, frames, hw, hw))
    spec = ConditionSpec()
    if image:
        ref = moving_square(direction, (int(o.get("row", 2)), int(o.get("col", 2))), speed=speed,
                            frames=frames, hw=hw, channels=k)
        spec = first_frame(ref)
    text, null = model.embed(caption), model.embed("")

    def cond_input(x, with_image):
        return build_condition_input(x, spec if with_image else ConditionSpec())

    def hook(x, t, step):
        return guided_velocity(model.velocity, x, t, step, gcfg, text, null, cond_input)

    video = _finite(euler_sample(None, x1, gcfg.steps, guidance_hook=hook), "sample")
    out = o.out
    name = "i2v" if image else "t2v"
    np.save(out / f"{name}_sample.npy", video)
    frames_figure(video, out / f"{name}_sample.png", caption)
    if image:
        grid = schedule_grid(gcfg, frames)
        guidance_figure(grid, out / "guidance_schedule.png")
        np.savetxt(out / "guidance_schedule.csv", grid, delimiter=",", fmt="%.6g")
    print(f"{name} sample {video.shape} for {caption!r} -> {out / f'{name}_sample.npy'}")
    return 0


def cmd_sample(o: Options) -> int:
    return _sample(o, image=False)


def cmd_i2v_sample(o: Options) -> int:
    return _sample(o, image=True)


def cmd_scale_search(o: Options) -> int:
    from .plotting import frames_figure, trace_figure
    from .scaling import METRICS, MixtureVelocity, ScalingConfig, scaled_sample, scaling_cost, toy_templates, trace_jsonl

    s = dict(o.config.get("scaling", {}) or {})
    if o.get("inject") is not None:
        s["injection_steps"] = _int_list(o.get("inject"))
    for k in ("seeds", "variations", "lookahead", "noise_scale", "continue_from"):
        v = getattr(o.args, k, None)
        if v is not None:
            s[k] = v
    if o.get("metric") is not None:
        if o.get("metric") not in METRICS:
            raise CliError(EX_CONFIG, f"unknown metric {o.get('metric')!r}; choose from {METRICS}")
        s["weights"] = [1.0 if m == o.get("metric") else 0.0 for m in METRICS]
    elif o.get("verifier_weights") is not None:
        s["weights"] = _float_list(o.get("verifier_weights"))
    config = _build(ScalingConfig, s, "scaling config")
    steps = int(o.get("steps", 20))
    evals = int(o.get("evals_per_step", 1))
    templates = toy_templates()
    try:
        res = scaled_sample(MixtureVelocity(templates), templates.shape[1:], steps, config, seed=o.seed,
                            evals_per_step=evals)
    except ValueError as e:
        raise CliError(EX_CONFIG, str(e)) from e
    _finite(res.sample, "scaled sample")
    out = o.out
    (out / "trace.jsonl").write_text("".join(line + "\n" for line in trace_jsonl(res.trace)))
    np.save(out / "scaled_sample.npy", res.sample)
    frames_figure(res.sample, out / "scaled_sample.png")
    if res.trace:
        trace_figure(res.trace, out / "trace.png")
    expected = scaling_cost(config, steps, evals)
    _write_json(out / "scaling.json", {"evaluations": res.evaluations, "closed_form": expected,
                                       "chosen_seed": res.chosen_seed, "seed_scores": res.seed_scores,
                                       "config": asdict(config), "steps": steps})
    print(f"{len(res.trace)} decisions, {res.evaluations} model evaluations (closed form {expected})")
    return 0


def cmd_grad_check(o: Options) -> int:
    from .gradcheck import check_all, check_model

    dtype = o.get("dtype", "float64")
    tol = float(o.get("tolerance", 1e-5 if dtype == "float64" else 1e-3))
    reports = check_all(dtype, tol, o.seed)
    if o.get("model", False):
        reports += check_model(dtype=dtype, tolerance=tol, seed=o.seed)
    rows = [{"op": r.op, "dtype": r.dtype, "max_rel_error": r.max_rel_error, "tolerance": r.tolerance,
             "passed": r.passed} for r in reports]
    _write_csv(o.out / "gradcheck.csv", rows, ["op", "dtype", "max_rel_error", "tolerance", "passed"])
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.op:<28} {r.max_rel_error:.3e} (< {r.tolerance:g})")
    failed = [r.op for r in reports if not r.passed]
    if failed:
        raise CliError(EX_NUMERIC, f"gradient check failed for {failed}")
    return 0


# ------------------------------------------------------------------ parser

COMMANDS = {
    "filter": cmd_filter, "stats": cmd_stats, "bucket-plan": cmd_bucket_plan, "batch-search": cmd_batch_search,
    "cost": cmd_cost, "train-toy": cmd_train_toy, "sample": cmd_sample, "i2v-sample": cmd_i2v_sample,
    "scale-search": cmd_scale_search, "grad-check": cmd_grad_check, "token-count": cmd_token_count,
    "synth-corpus": cmd_synth_corpus,
}


def _common(p: argparse.ArgumentParser, out: bool = True) -> None:
    p.add_argument("--config", help="YAML config; flags override its values")
    p.add_argument("--seed", type=int, help="run seed (default: config, then $OS2_SEED, then 0)")
    if out:
        p.add_argument("--out", help="output directory (default: ./out)")


def _guidance_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--g-img", dest="g_img", type=float, help="image guidance scale")
    p.add_argument("--g-txt", dest="g_txt", type=float, help="text guidance scale")
    p.add_argument("--mode", choices=["single", "decoupled"], help="guidance composition")
    p.add_argument("--oscillation", action="store_true", default=None, help="alternate image guidance with 1 after warmup")
    p.add_argument("--warmup-steps", dest="warmup_steps", type=int, help="steps before oscillation starts")
    p.add_argument("--dynamic", choices=["off", "linear"], help="per-frame/per-step image guidance schedule")
    p.add_argument("--steps", type=int, help="denoising steps")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deskvid", description="Desk-scale video generation toolkit")
    parser.add_argument("--version", action="version", version=f"deskvid {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("filter", help="admit, segment, score and tier a clip corpus")
    _common(p)
    p.add_argument("--corpus", help="directory containing metadata.jsonl")
    p.add_argument("--metadata", help="metadata JSONL (overrides --corpus)")
    p.add_argument("--tier", type=int, help="tier whose id list is reported (default: strictest)")

    p = sub.add_parser("stats", help="attribute histograms and caption word counts")
    _common(p)
    p.add_argument("--corpus", help="directory containing metadata.jsonl")
    p.add_argument("--metadata", help="metadata JSONL (overrides --corpus)")
    p.add_argument("--records", help="records.jsonl written by filter (skips scoring)")

    p = sub.add_parser("bucket-plan", help="group samples into bucketed batches")
    _common(p)
    p.add_argument("--samples", help="JSONL with id, frames, height, width per sample")
    p.add_argument("--stage", type=int, choices=[1, 2, 3], help="bucket table to use (default 1)")

    p = sub.add_parser("batch-search", help="batch size per token count under memory and time limits")
    _common(p)
    p.add_argument("--tokens", help="comma-separated token counts")
    p.add_argument("--memory-cap", dest="memory_cap", type=float, help="memory budget in model units")
    p.add_argument("--mem-per-token", dest="mem_per_token", type=float, help="memory per token per sample")
    p.add_argument("--quad", type=float, help="quadratic attention cost coefficient")
    p.add_argument("--max-batch", dest="max_batch", type=int, help="search ceiling (default 512)")
    p.add_argument("--cp", type=int, help="context-parallel degree dividing tokens")

    p = sub.add_parser("cost", help="training cost per stage")
    _common(p)
    p.add_argument("--stages", help="'reference' for the built-in three-stage schedule; custom lists come from the config file")
    p.add_argument("--price", type=float, help="USD per GPU-hour")

    p = sub.add_parser("train-toy", help="train a tiny MMDiT on moving-square videos")
    _common(p)
    p.add_argument("--steps", type=int, help="AdamW steps (default 300)")
    p.add_argument("--batch", type=int, help="batch size (default 8)")
    p.add_argument("--lr", type=float, help="learning rate (default 3e-3)")
    p.add_argument("--frames", type=int, help="latent frames per clip (default 2)")
    p.add_argument("--hw", type=int, help="frame side in pixels (default 8)")

    for name, help_text in (("sample", "text-to-video sample from toy weights"),
                            ("i2v-sample", "image-to-video sample conditioned on a first frame")):
        p = sub.add_parser(name, help=help_text)
        _common(p)
        p.add_argument("--weights", help="weights directory written by train-toy")
        p.add_argument("--caption", help="prompt (default: derived from direction and speed)")
        p.add_argument("--direction", choices=["right", "left", "up", "down"], help="square direction")
        p.add_argument("--speed", type=int, help="pixels per frame")
        if name == "i2v-sample":
            p.add_argument("--row", type=int, help="square start row of the conditioning frame")
            p.add_argument("--col", type=int, help="square start column of the conditioning frame")
        _guidance_flags(p)

    p = sub.add_parser("scale-search", help="inference-time search on the analytic toy model")
    _common(p)
    p.add_argument("--inject", help="comma-separated 1-based injection steps")
    p.add_argument("--seeds", type=int, help="initial noises")
    p.add_argument("--variations", type=int, help="candidates per injection step")
    p.add_argument("--lookahead", type=int, help="denoising steps before scoring")
    p.add_argument("--noise-scale", dest="noise_scale", type=float, help="injection noise relative to state std")
    p.add_argument("--continue-from", dest="continue_from", choices=["branch", "lookahead"], help="continuation point")
    p.add_argument("--metric", help="score only this verifier metric")
    p.add_argument("--verifier-weights", dest="verifier_weights", help="six comma-separated metric weights")
    p.add_argument("--steps", type=int, help="denoising steps (default 20)")
    p.add_argument("--evals-per-step", dest="evals_per_step", type=int, help="model calls per step (3 for decoupled CFG)")

    p = sub.add_parser("grad-check", help="finite-difference checks of every primitive")
    _common(p)
    p.add_argument("--dtype", choices=["float32", "float64"], help="precision (default float64)")
    p.add_argument("--tolerance", type=float, help="max relative error")
    p.add_argument("--model", action="store_true", default=None, help="also check a (1,1)-block MMDiT")

    p = sub.add_parser("token-count", help="transformer tokens for a video")
    _common(p, out=False)
    p.add_argument("--frames", type=int, help="pixel frames")
    p.add_argument("--size", type=int, help="square frame side")
    p.add_argument("--height", type=int, help="frame height")
    p.add_argument("--width", type=int, help="frame width")
    p.add_argument("--spec", help="compression spec: hunyuan or dcae")

    p = sub.add_parser("synth-corpus", help="write the synthetic curation corpus")
    _common(p)
    p.add_argument("--clips", type=int, help="number of clips (default 60)")
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    from .tensor import NonFiniteError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return EX_USAGE
        opts = Options(args, _load_config(args.config))
        return COMMANDS[args.command](opts)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except NonFiniteError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EX_NUMERIC
    except FileNotFoundError as e:
        print(f"missing input: {e}", file=sys.stderr)
        return EX_NOINPUT
    except (KeyError, ValueError, TypeError) as e:
        print(f"bad input or config: {e}", file=sys.stderr)
        return EX_CONFIG


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
