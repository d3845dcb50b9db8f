"""Command-line surface: evaluate, label, pairs, train, parse, gen-synthetic.

Every command is deterministic given its arguments and seed; outputs are
sorted by sample id so parallelism never changes bytes. Exit codes are
0 success, 1 parse/runtime error on inputs, 2 config/validation error.
No hidden normalization happens here: flips and masking live inside the
metrics module only.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import dataset_io, metrics, tpo
from .core import Trajectory, Waypoint
from .dataset_io import DatasetValidationError, ParseError, SceneSample
from .meta_actions import Formulation, label_cumulative_sequence, label_local_sequence
from .metrics import EvalSample, Protocol
from .synthetic import make_scene_samples

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_VALIDATION = 2


class InputError(Exception):
    """Unreadable or unparseable input file (exit 1)."""


class ValidationError(Exception):
    """Inconsistent arguments, config, or cross-file references (exit 2)."""


def _write_lines(path: Optional[str], lines: list[str]) -> None:
    text = "\n".join(lines) + "\n"
    if path:
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _jsonable(value):
    # keep records strict JSON: non-finite floats become strings
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _records(objs: list[dict]) -> list[str]:
    return [json.dumps(_jsonable(o), separators=(",", ":")) for o in objs]


def _load_dataset(path: str, load_occupancy: bool = True) -> list[SceneSample]:
    try:
        samples = dataset_io.load_samples(path, load_occupancy=load_occupancy)
    except OSError as exc:
        raise InputError(f"cannot read dataset {path}: {exc}") from exc
    except DatasetValidationError as exc:
        report = "\n".join(f"  line {e.record_index + 1}: {e.field}: {e.message}" for e in exc.errors)
        raise InputError(f"invalid dataset {path}:\n{report}") from exc
    return sorted(samples, key=lambda s: s.sample_id)


# ---------------------------------------------------------------------------
# eval


def _load_predictions(path: str) -> dict[str, Trajectory]:
    preds: dict[str, Trajectory] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    traj = Trajectory(
                        tuple(Waypoint(float(x), float(y)) for x, y in rec["trajectory"])
                    )
                    preds[str(rec["sample_id"])] = traj
                except (ValueError, KeyError, TypeError) as exc:
                    raise InputError(f"predictions {path} line {lineno}: {exc}") from exc
    except OSError as exc:
        raise InputError(f"cannot read predictions {path}: {exc}") from exc
    return preds


def cmd_eval(args: argparse.Namespace) -> int:
    samples = _load_dataset(args.dataset)
    preds = _load_predictions(args.predictions)

    dataset_ids = [s.sample_id for s in samples]
    missing = [i for i in dataset_ids if i not in preds]
    unknown = sorted(set(preds) - set(dataset_ids))
    problems = [f"missing prediction for sample id {i}" for i in missing]
    problems += [f"prediction for unknown sample id {i}" for i in unknown]
    if problems:
        raise ValidationError("\n".join(problems))

    batch = [
        EvalSample(pred=preds[s.sample_id], gt=s.gt_trajectory, mask=s.gt_mask, grids=s.occupancy)
        for s in samples
    ]
    protocols = [Protocol.STP3, Protocol.UNIAD] if args.protocol == "all" else [Protocol.parse(args.protocol)]
    reports = [metrics.evaluate_batch(batch, proto, jobs=args.jobs) for proto in protocols]

    if args.format == "records":
        lines = _records([r.to_record() for r in reports])
    else:
        lines = []
        for r in reports:
            lines.append(r.to_text())
            lines.append("")
        lines = lines[:-1]
    _write_lines(args.out, lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# label


def cmd_label(args: argparse.Namespace) -> int:
    samples = _load_dataset(args.dataset, load_occupancy=False)
    formulation = Formulation(args.formulation)
    records = []
    for s in samples:
        poses = dataset_io.pose_series_from_sample(s)
        if formulation is Formulation.LOCAL:
            seq = label_local_sequence(poses)
        else:
            seq = label_cumulative_sequence(poses)
        records.append(
            {
                "kind": "labels",
                "sample_id": s.sample_id,
                "formulation": formulation.value,
                "actions": [list(a.as_pair()) for a in seq.actions],
            }
        )
    _write_lines(args.out, _records(records))
    return EXIT_OK


# ---------------------------------------------------------------------------
# pairs


def cmd_pairs(args: argparse.Namespace) -> int:
    try:
        cfg = tpo.TpoConfig(K=args.k, temperature=args.temperature, seed=args.seed)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    try:
        policy, tokenizer, spans = tpo.load_policy(args.policy)
    except OSError as exc:
        raise InputError(f"cannot read policy {args.policy}: {exc}") from exc
    except (ValueError, KeyError) as exc:
        raise ValidationError(f"invalid policy file {args.policy}: {exc}") from exc

    samples = _load_dataset(args.dataset, load_occupancy=False)
    if len(samples) > policy.n_contexts:
        raise ValidationError(
            f"policy covers {policy.n_contexts} contexts but the dataset has {len(samples)} samples"
        )

    records = []
    built = skipped = 0
    disp_preferred = []
    for i, s in enumerate(samples):
        ctx = tpo.ToyContext(i, s.gt_trajectory, start_speed=s.ego.speed)
        rng = np.random.default_rng([args.seed, 0, i])
        responses = tpo.sample_responses(policy, ctx, cfg, rng=rng, tokenizer=tokenizer, spans=spans)
        pair = tpo.build_pair(responses, context_id=i)
        if pair is None:
            skipped += 1
            continue
        built += 1
        disp_preferred.append(pair.preferred.displacement)
        records.append(
            {
                "kind": "pair",
                "sample_id": s.sample_id,
                "context": i,
                "preferred": _response_record(pair.preferred),
                "dispreferred": _response_record(pair.dispreferred),
            }
        )
    records.append(
        {
            "kind": "pairs_summary",
            "built": built,
            "skipped": skipped,
            "preferred_displacement_mean": (sum(disp_preferred) / built) if built else None,
        }
    )
    _write_lines(args.out, _records(records))
    return EXIT_OK


def _response_record(r: tpo.SampledResponse) -> dict:
    return {"tokens": list(r.tokens), "displacement": r.displacement, "logprob": r.logprob_policy}


# ---------------------------------------------------------------------------
# train


def _config_block(raw: dict, key: str, cls):
    try:
        return cls(**raw.get(key, {}))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"config block {key!r}: {exc}") from exc


def cmd_train(args: argparse.Namespace) -> int:
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read config {args.config}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"config {args.config} is not valid JSON: {exc}") from exc

    mode = args.mode or raw.get("mode")
    if mode not in ("sft", "tpo", "sft+tpo"):
        raise ValidationError(f"mode must be sft, tpo or sft+tpo, got {mode!r}")
    task_raw = raw.get("task", {})
    n_contexts = int(task_raw.get("n_contexts", 200))
    task_seed = int(task_raw.get("seed", 7))
    reps = int(task_raw.get("reps", 4))
    noise_bins = int(task_raw.get("noise_bins", 2))
    if n_contexts <= 0 or reps <= 0 or noise_bins < 0:
        raise ValidationError("task requires n_contexts > 0, reps > 0, noise_bins >= 0")
    sft_cfg = _config_block(raw, "sft", tpo.SftConfig)
    tpo_cfg = _config_block(raw, "tpo", tpo.TpoConfig)
    out_dir = Path(args.out or raw.get("out_dir", "runs/toy"))
    out_dir.mkdir(parents=True, exist_ok=True)

    tokenizer = tpo.TrajTokenizer()
    spans = tpo.default_span_layout()
    contexts, examples = tpo.make_toy_task(n_contexts, task_seed, reps, noise_bins, tokenizer, spans)

    echo = {
        "mode": mode,
        "task": {"n_contexts": n_contexts, "seed": task_seed, "reps": reps, "noise_bins": noise_bins},
        "sft": {
            "lambda_weight": sft_cfg.lambda_weight,
            "learning_rate": sft_cfg.learning_rate,
            "steps": sft_cfg.steps,
            "seed": sft_cfg.seed,
        },
        "tpo": {
            "beta": tpo_cfg.beta,
            "K": tpo_cfg.K,
            "temperature": tpo_cfg.temperature,
            "learning_rate": tpo_cfg.learning_rate,
            "steps": tpo_cfg.steps,
            "seed": tpo_cfg.seed,
            "score_all_waypoints": tpo_cfg.score_all_waypoints,
        },
        "out_dir": str(out_dir),
    }
    if raw.get("policy_path"):
        echo["policy_path"] = raw["policy_path"]
    (out_dir / "config_echo.json").write_text(json.dumps(echo, indent=2) + "\n", encoding="utf-8")

    records: list[dict] = [{"kind": "config", **echo}]
    summary: dict = {"kind": "summary", "mode": mode}

    policy = None
    if mode in ("sft", "sft+tpo"):
        policy = tpo.ToyPolicy(n_contexts, len(spans), tokenizer.vocab_size)
        policy, curve = tpo.train_sft(policy, examples, sft_cfg)
        records += [{"kind": "sft_step", "step": i, "loss": v} for i, v in enumerate(curve)]
        disp, invalid = tpo.evaluate_greedy_displacement(policy, contexts, tokenizer, spans)
        summary["sft_displacement"] = disp
        summary["sft_invalid_decodes"] = invalid
        tpo.save_policy(policy, out_dir / "policy_sft.jsonl", tokenizer, spans)

    if mode in ("tpo", "sft+tpo"):
        if policy is None:
            policy_path = raw.get("policy_path")
            if not policy_path:
                raise ValidationError("mode tpo requires a policy_path in the config")
            try:
                policy, tokenizer, spans = tpo.load_policy(policy_path)
            except OSError as exc:
                raise InputError(f"cannot read policy {policy_path}: {exc}") from exc
            except (ValueError, KeyError) as exc:
                raise ValidationError(f"invalid policy file {policy_path}: {exc}") from exc
            if policy.n_contexts != n_contexts:
                raise ValidationError("policy context count does not match the task config")
        ref = policy.copy()
        policy, step_metrics = tpo.train_tpo(policy, ref, contexts, tpo_cfg, tokenizer, spans)
        records += [m.to_record() for m in step_metrics]
        disp, invalid = tpo.evaluate_greedy_displacement(policy, contexts, tokenizer, spans)
        summary["tpo_displacement"] = disp
        summary["tpo_invalid_decodes"] = invalid
        tpo.save_policy(policy, out_dir / "policy_tpo.jsonl", tokenizer, spans)

    records.append(summary)
    _write_lines(str(out_dir / "run_records.jsonl"), _records(records))
    sys.stdout.write(json.dumps(_jsonable(summary), separators=(",", ":")) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parse


def cmd_parse(args: argparse.Namespace) -> int:
    try:
        text = Path(args.completion).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read completion {args.completion}: {exc}") from exc
    try:
        out = dataset_io.parse_model_output(text)
    except ParseError as exc:
        sys.stdout.write(
            json.dumps(
                {"kind": "parse_error", "error": type(exc).__name__, "message": str(exc), "byte_offset": exc.byte_offset},
                separators=(",", ":"),
            )
            + "\n"
        )
        return EXIT_INPUT
    record = {
        "kind": "model_output",
        "prediction": out.prediction_block,
        "think": out.think_block,
        "actions": [list(a.as_pair()) for a in out.actions.actions],
        "trajectory": [[w.x, w.y] for w in out.trajectory.waypoints],
    }
    _write_lines(args.out, _records([record]))
    return EXIT_OK


# ---------------------------------------------------------------------------
# gen-synthetic


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    if args.n <= 0:
        raise ValidationError("n must be positive")
    samples = make_scene_samples(args.n, args.seed, split=args.split)
    out = Path(args.out)
    dataset_io.save_samples(samples, out, write_occupancy=True)
    digest = hashlib.sha256(out.read_bytes()).hexdigest()
    sys.stdout.write(
        json.dumps({"kind": "gen_summary", "n": args.n, "seed": args.seed, "path": str(out), "sha256": digest})
        + "\n"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bevplan", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="open-loop l2/collision evaluation")
    p.add_argument("--dataset", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--protocol", default="all", choices=["stp3", "uniad", "all"])
    p.add_argument("--format", default="text", choices=["text", "records"])
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("label", help="rule-based meta-action labeling")
    p.add_argument("--dataset", required=True)
    p.add_argument("--formulation", default="local", choices=["local", "cumulative"])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("pairs", help="build displacement-ranked preference pairs")
    p.add_argument("--dataset", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--temperature", type=float, default=1.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("train", help="toy SFT / TPO experiment")
    p.add_argument("--mode", default=None, choices=["sft", "tpo", "sft+tpo"])
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory (overrides config out_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("parse", help="parse a completion file")
    p.add_argument("completion")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("gen-synthetic", help="emit a synthetic dataset file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train", choices=["train", "test"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
