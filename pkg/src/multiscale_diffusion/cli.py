"""Command line: plan schemes, generate data, train, roll out, evaluate.

Every stage reads and writes files under ``--out-dir``::

    config.json                 resolved experiment configuration
    data/train.bin|json         training trajectories (random phases)
    data/test.bin|json          observed pasts of the test trajectories
    data/reference.bin|json     reference futures, ``n_reference`` rows per test trajectory
    model/<name>.ckpt           denoiser checkpoint(s) and loss curves
    ensembles/<scheme>.bin|json predicted futures, ``n_ensemble`` rows per test trajectory
    results.csv                 scheme, metric, bucket, value
    summary.json
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import io
from .denoiser import MLPDenoiser, TrainConfig, load_checkpoint, save_checkpoint, train
from .diagram import render_svg, render_text
from .diffusion import NoiseSchedule, SamplerConfig
from .metrics import bucket_report, parse_buckets
from .rng import Stream, derive_seed
from .rollout import RolloutRequest, run
from .scheme import PlanningError, extend_scheme, make_scheme, validate_scheme
from .synthetic import (
    PhaseMixtureDenoiser,
    SinusoidConfig,
    Trajectory,
    generate_dataset,
    generate_sinusoid,
    load_dataset,
    save_dataset,
    trend,
)

DEFAULT_SCHEMES = ("multiscale", "multiscale:past3", "autoregressive", "hierarchy2")

# sub-seed slots derived from the master seed
SEED_TRAIN_DATA, SEED_TEST_DATA, SEED_INIT, SEED_OPT, SEED_SAMPLER, SEED_REFERENCE = range(1, 7)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage


@dataclass
class ExperimentConfig:
    synthetic: SinusoidConfig = field(default_factory=SinusoidConfig)
    n_train: int = 512
    n_test: int = 16
    # the present of every test trajectory sits at a trough of the default trend
    test_present: int = 90
    horizon: int = 9
    k: int = 3
    schemes: tuple[str, ...] = DEFAULT_SCHEMES
    total: int = 32
    n_ensemble: int = 256
    n_reference: int = 2048
    buckets: str = "1:4,4:16,16:32"
    hidden: tuple[int, ...] = (128, 128, 128)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(cosine_decay=True))
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    method: str = "adams_bashforth_2"
    shared_model: bool = True
    # "oracle" swaps the network for the exact phase-mixture posterior denoiser
    denoiser: str = "mlp"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.test_present < 1:
            raise ValueError("test_present must be >= 1")
        for name in ("n_train", "n_test", "n_ensemble", "n_reference", "total"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.denoiser not in ("mlp", "oracle"):
            raise ValueError(f"denoiser must be 'mlp' or 'oracle', got {self.denoiser!r}")
        self.schemes = tuple(self.schemes)
        self.hidden = tuple(int(h) for h in self.hidden)
        parse_buckets(self.buckets)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schemes"] = list(self.schemes)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "synthetic" in d:
            d["synthetic"] = SinusoidConfig(**d["synthetic"])
        if "train" in d:
            d["train"] = TrainConfig(**d["train"])
        if "schedule" in d:
            d["schedule"] = NoiseSchedule(**d["schedule"])
        return cls(**d)


def slug(name: str) -> str:
    return name.replace(":", "_")


def _schemes(cfg: ExperimentConfig):
    out = {}
    for kind in cfg.schemes:
        s = make_scheme(kind, cfg.horizon, cfg.k)
        report = validate_scheme(extend_scheme(s, max(cfg.total, s.horizon)))
        if not report:
            raise PlanningError(f"scheme {kind}: {report.message}", report.indices)
        out[kind] = s
    return out


def _write_config(out: Path, cfg: ExperimentConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def _read_config(out: Path) -> ExperimentConfig:
    path = out / "config.json"
    if not path.exists():
        raise io.ArtifactError(f"{path}: missing; run the generate stage first")
    return ExperimentConfig.from_dict(json.loads(path.read_text()))


# stages -----------------------------------------------------------------


def stage_generate(cfg: ExperimentConfig, out: Path) -> None:
    _write_config(out, cfg)
    syn = cfg.synthetic
    if syn.length < cfg.test_present + 1:
        syn = replace(syn, length=cfg.test_present + 1)
    train_set = generate_dataset(syn, cfg.n_train, derive_seed(cfg.seed, SEED_TRAIN_DATA))
    save_dataset(out / "data" / "train.bin", train_set, syn)

    test = [
        generate_sinusoid(
            replace(syn, length=cfg.test_present + 1, seed=derive_seed(cfg.seed, SEED_TEST_DATA, i)),
            cfg.test_present,
        )
        for i in range(cfg.n_test)
    ]
    save_dataset(out / "data" / "test.bin", test, syn)

    t = np.arange(cfg.test_present + 1, cfg.test_present + 1 + cfg.total)
    mean = trend(syn, t)
    ref = np.concatenate(
        [
            mean + syn.noise_std * Stream(cfg.seed, (SEED_REFERENCE, i)).normal((cfg.n_reference, cfg.total))
            for i in range(cfg.n_test)
        ]
    )
    io.write_table(
        out / "data" / "reference.bin",
        ref,
        {"kind": "reference", "n_test": cfg.n_test, "n_reference": cfg.n_reference, "total": cfg.total},
    )


def _training_pairs(schemes) -> list:
    pairs = []
    for s in schemes:
        for p in s.training_pairs():
            if p not in pairs:
                pairs.append(p)
    return pairs


def stage_train(cfg: ExperimentConfig, out: Path) -> None:
    if cfg.denoiser == "oracle":
        return
    train_set, _ = load_dataset(out / "data" / "train.bin")
    values = np.stack([tr.values for tr in train_set])
    offset, scale = float(values.mean()), float(values.std())
    schemes = _schemes(cfg)
    groups = {"shared": list(schemes.values())} if cfg.shared_model else {
        slug(k): [s] for k, s in schemes.items()
    }
    for name, members in groups.items():
        pairs = _training_pairs(members)
        time_scale = float(max(max(abs(t) for t in idx) for idx, _ in pairs))
        d = MLPDenoiser(
            len(pairs[0][0]),
            cfg.hidden,
            data_std=1.0,
            time_scale=time_scale,
            seed=derive_seed(cfg.seed, SEED_INIT),
            offset=offset,
            scale=scale,
        )
        tcfg = replace(cfg.train, seed=derive_seed(cfg.seed, SEED_OPT))
        result = train(d, (values - offset) / scale, pairs, tcfg)
        save_checkpoint(out / "model" / f"{name}.ckpt", d)
        with open(out / "model" / f"{name}_loss.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "loss"])
            for e, v in enumerate(result.epoch_losses, 1):
                w.writerow([e, repr(float(v))])


def _model_for(cfg: ExperimentConfig, out: Path, kind: str):
    if cfg.denoiser == "oracle":
        return PhaseMixtureDenoiser(cfg.synthetic)
    name = "shared" if cfg.shared_model else slug(kind)
    return load_checkpoint(out / "model" / f"{name}.ckpt")


def stage_rollout(cfg: ExperimentConfig, out: Path, checkpoint: Path | None = None) -> None:
    test, _ = load_dataset(out / "data" / "test.bin")
    for kind, s in _schemes(cfg).items():
        d = load_checkpoint(checkpoint) if checkpoint else _model_for(cfg, out, kind)
        futures, prov, calls = [], None, 0
        for i, tr in enumerate(test):
            sampler = SamplerConfig(cfg.schedule, cfg.method, derive_seed(cfg.seed, SEED_SAMPLER, i))
            obs = Trajectory(tr.past, tr.present_index)
            e = run(d, RolloutRequest(s, obs, cfg.total, cfg.n_ensemble, sampler))
            futures.append(e.future())
            prov, calls = e.provenance, calls + e.sampler_calls
        io.write_table(
            out / "ensembles" / f"{slug(kind)}.bin",
            np.concatenate(futures),
            {
                "kind": "ensemble_futures",
                "scheme": kind,
                "n_test": len(test),
                "n_ensemble": cfg.n_ensemble,
                "provenance": [list(p) for p in prov],
                "sampler_calls": calls,
                "scheme_json": s.to_dict(),
            },
        )


def stage_eval(cfg: ExperimentConfig, out: Path) -> list[dict]:
    ref, _ = io.read_table(out / "data" / "reference.bin")
    buckets = parse_buckets(cfg.buckets)
    rows = []
    for kind in cfg.schemes:
        pred, meta = io.read_table(out / "ensembles" / f"{slug(kind)}.bin")
        if meta.get("n_test") != cfg.n_test:
            raise io.ArtifactError(f"ensemble for {kind} holds {meta.get('n_test')} test trajectories")
        per_test = []
        for i in range(cfg.n_test):
            p = pred[i * cfg.n_ensemble : (i + 1) * cfg.n_ensemble]
            o = ref[i * cfg.n_reference : (i + 1) * cfg.n_reference]
            per_test.append(bucket_report(p, o, buckets))
        for j, row in enumerate(per_test[0]):
            value = float(np.mean([r[j]["value"] for r in per_test]))
            rows.append({"scheme": kind, "metric": row["metric"], "bucket": row["bucket"], "value": value})
        s = make_scheme(kind, cfg.horizon, cfg.k)
        ext = extend_scheme(s, max(cfg.total, s.horizon))
        rows.append({"scheme": kind, "metric": "model_calls", "bucket": "all", "value": float(len(ext))})
        rows.append({"scheme": kind, "metric": "lookback", "bucket": "all", "value": float(s.lookback)})
    with open(out / "results.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["scheme", "metric", "bucket", "value"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "value": repr(r["value"])})
    far = f"{buckets[-1][0]}:{buckets[-1][1]}"
    summary = {
        "far_bucket": far,
        "wasserstein_far": {
            r["scheme"]: r["value"] for r in rows if r["metric"] == "wasserstein" and r["bucket"] == far
        },
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return rows


# argument handling --------------------------------------------------------


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if getattr(args, "config", None):
        cfg = ExperimentConfig.from_dict(json.loads(Path(args.config).read_text()))
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "schemes", None):
        overrides["schemes"] = tuple(s.strip() for s in args.schemes.split(",") if s.strip())
    for name in ("n_ensemble", "n_test", "n_train", "n_reference", "total"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    if getattr(args, "denoiser", None):
        overrides["denoiser"] = args.denoiser
    if getattr(args, "buckets", None):
        overrides["buckets"] = args.buckets
    tr = {}
    for name in ("epochs", "steps_per_epoch"):
        v = getattr(args, name, None)
        if v is not None:
            tr[name] = v
    if tr:
        overrides["train"] = replace(cfg.train, **tr)
    return replace(cfg, **overrides) if overrides else cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment configuration")
    p.add_argument("--out-dir", default="runs/default", help="artifact directory")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--schemes", help="comma separated scheme kinds, e.g. multiscale,autoregressive")
    p.add_argument("--n-ensemble", dest="n_ensemble", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-reference", dest="n_reference", type=int)
    p.add_argument("--total", type=int, help="future steps to generate")
    p.add_argument("--buckets", help='horizon buckets, e.g. "1:4,4:16,16:32"')
    p.add_argument("--denoiser", choices=["mlp", "oracle"], help="trained network or exact posterior")
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multiscale-diffusion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="plan a scheme and draw it")
    p.add_argument("--scheme", default="multiscale")
    p.add_argument("--horizon", type=int, default=9)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--total", type=int, help="extend the scheme to this many future steps")
    p.add_argument("--out-dir", help="write <scheme>.json, .txt and .svg here")

    for name, text in (
        ("generate", "write training, test and reference data"),
        ("train", "train the denoiser"),
        ("rollout", "sample ensembles for every scheme"),
        ("eval", "score ensembles against the reference"),
        ("experiment", "run generate, train, rollout and eval"),
    ):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        if name == "rollout":
            p.add_argument("--checkpoint", help="use this checkpoint instead of the trained one")
    return parser


def cmd_plan(args) -> int:
    s = make_scheme(args.scheme, args.horizon, args.k)
    if args.total:
        s = extend_scheme(s, max(args.total, s.horizon))
    report = validate_scheme(s)
    if not report:
        raise PlanningError(report.message, report.indices)
    text = render_text(s)
    sys.stdout.write(text)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{slug(args.scheme)}.json").write_text(s.to_json(indent=2) + "\n")
        (out / f"{slug(args.scheme)}.txt").write_text(text)
        (out / f"{slug(args.scheme)}.svg").write_text(render_svg(s))
    return 0


def _staged(stage: str, fn, *a):
    try:
        return fn(*a)
    except StageError:
        raise
    except Exception as e:
        raise StageError(stage, e) from e


def _format_summary(rows: list[dict], far: str) -> str:
    lines = [f"far bucket {far}: per-step Wasserstein"]
    for r in rows:
        if r["metric"] == "wasserstein" and r["bucket"] == far:
            lines.append(f"  {r['scheme']:<24} {r['value']:.4f}")
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    stage = args.command
    try:
        if stage == "plan":
            return _staged("plan", cmd_plan, args)
        out = Path(args.out_dir)
        if stage in ("generate", "experiment"):
            cfg = _staged("config", _load_config, args)
        else:
            cfg = _staged("config", _read_config, out)
        t0 = time.perf_counter()
        if stage in ("generate", "experiment"):
            _staged("generate", stage_generate, cfg, out)
        if stage in ("train", "experiment"):
            _staged("train", stage_train, cfg, out)
        if stage in ("rollout", "experiment"):
            ckpt = Path(args.checkpoint) if getattr(args, "checkpoint", None) else None
            _staged("rollout", stage_rollout, cfg, out, ckpt)
        if stage in ("eval", "experiment"):
            rows = _staged("eval", stage_eval, cfg, out)
            buckets = parse_buckets(cfg.buckets)
            sys.stdout.write(_format_summary(rows, f"{buckets[-1][0]}:{buckets[-1][1]}"))
        print(f"{stage} done in {time.perf_counter() - t0:.1f}s -> {out}", file=sys.stderr)
        return 0
    except StageError as e:
        print(f"error {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
