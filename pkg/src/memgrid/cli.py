"""Command-line entry points.

Subcommands: ``gen-data`` (write episode datasets), ``train`` (fit either
policy), ``eval`` (greedy rollouts -> plain-text report), ``report`` (merge
eval reports), ``viz-slots`` (attention overlay PNGs), ``token-report``
(context cost table), ``audit-aliasing`` (observation-aliasing scan).

Options may come from ``--config`` files of ``key = value`` lines (keys match
the long flag names with ``-`` or ``_``); explicit flags override the file,
the file overrides built-in defaults.  Exit codes: 0 success, 1 runtime
failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

__all__ = ["main", "build_parser", "read_config_file"]


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blanks ignored."""
    out: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line (expected key = value): {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> argparse.Namespace:
    """Fill still-default options from the --config file (flags win)."""
    if not getattr(args, "config", None):
        return args
    file_values = read_config_file(args.config)
    unknown = set(file_values) - {k for k in vars(args)}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for key, raw in file_values.items():
        if getattr(args, key) is not None:
            continue  # explicit flag wins
        out = {"true": True, "false": False}.get(raw.lower(), raw)
        setattr(args, key, out)
    return args


def _opt(parser, name, type_, default, help_):
    """Register an option whose absence is detectable (default None) while
    remembering the real default for later resolution."""
    parser.add_argument(name, type=type_, default=None, help=f"{help_} (default {default})")
    parser.set_defaults(**{f"_default_{name.lstrip('-').replace('-', '_')}": default})


def _resolve(args, name, type_):
    value = getattr(args, name)
    if value is None:
        value = getattr(args, f"_default_{name}")
    return None if value is None else type_(value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memgrid", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate an episode dataset for a task")
    p.add_argument("--config", default=None)
    p.add_argument("--task", required=True)
    p.add_argument("--out", required=True)
    _opt(p, "--n-train", int, 100, "training episodes")
    _opt(p, "--n-val", int, 20, "validation episodes")
    _opt(p, "--seed", int, 0, "base seed")
    _opt(p, "--dilation", int, None, "frame-hold factor; task default if omitted")
    _opt(p, "--variant", str, "default", "goal variant")

    p = sub.add_parser("train", help="train a policy on a dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _opt(p, "--kind", str, "slot-memory", "slot-memory or reactive")
    _opt(p, "--steps", int, 2000, "optimizer steps")
    _opt(p, "--batch-size", int, 8, "parallel episode streams")
    _opt(p, "--chunk-len", int, 32, "truncated-backprop chunk length")
    _opt(p, "--lr", float, 3e-4, "peak learning rate")
    _opt(p, "--seed", int, 0, "training seed")
    _opt(p, "--log-every", int, 100, "steps between loss lines")
    _opt(p, "--num-slots", int, 16, "slot count")
    _opt(p, "--d-slot", int, 64, "slot width")
    _opt(p, "--d-enc", int, 64, "encoder feature width")
    _opt(p, "--hidden", int, 64, "per-slot state size")
    _opt(p, "--past", int, 16, "window steps before t")
    _opt(p, "--future", int, 16, "window steps after t")
    _opt(p, "--num-relations", int, 16, "relation tokens")

    p = sub.add_parser("eval", help="greedy rollouts -> report file")
    p.add_argument("--config", default=None)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--out", default=None, help="report path (stdout if omitted)")
    _opt(p, "--n", int, 20, "episodes")
    _opt(p, "--seed", int, 0, "eval seed")
    _opt(p, "--variant", str, "default", "goal variant")
    _opt(p, "--step-cap", int, None, "max steps; 4x mean demo length if omitted")

    p = sub.add_parser("report", help="merge eval report files into one table")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", default=None)

    p = sub.add_parser("viz-slots", help="attention overlay PNGs along a demo")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None)
    _opt(p, "--seed", int, 0, "layout seed")
    _opt(p, "--variant", str, "default", "goal variant")
    _opt(p, "--every", int, 4, "save every k-th frame")

    p = sub.add_parser("token-report", help="context token cost per model family")
    p.add_argument("--out", default=None)

    p = sub.add_parser("audit-aliasing", help="scan a dataset for aliased frames")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    _opt(p, "--eps", float, 1e-3, "RMS distance threshold")
    return parser


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
        print(f"wrote {out}")
    else:
        sys.stdout.write(text)


def _cmd_gen_data(args) -> int:
    from .data import generate_dataset

    index = generate_dataset(
        args.task,
        args.out,
        n_train=_resolve(args, "n_train", int),
        n_val=_resolve(args, "n_val", int),
        seed=_resolve(args, "seed", int),
        dilation=_resolve(args, "dilation", int),
        variant=_resolve(args, "variant", str),
    )
    count = sum(1 for ln in index.read_text().splitlines() if ln.strip())
    print(f"wrote {count} episodes, index at {index}")
    return 0


def _cmd_train(args) -> int:
    from .policy import ModelConfig, ReactivePolicy, SlotMemoryPolicy
    from .training import TrainConfig, train

    kind = _resolve(args, "kind", str)
    if kind not in ("slot-memory", "reactive"):
        raise ValueError(f"unknown model kind: {kind!r}")
    mcfg = ModelConfig(
        d_enc=_resolve(args, "d_enc", int),
        d_slot=_resolve(args, "d_slot", int),
        num_slots=_resolve(args, "num_slots", int),
        hidden=_resolve(args, "hidden", int),
        past=_resolve(args, "past", int),
        future=_resolve(args, "future", int),
        num_relations=_resolve(args, "num_relations", int),
    )
    model = ReactivePolicy(mcfg) if kind == "reactive" else SlotMemoryPolicy(mcfg)
    tcfg = TrainConfig(
        kind=kind,
        steps=_resolve(args, "steps", int),
        batch_size=_resolve(args, "batch_size", int),
        chunk_len=_resolve(args, "chunk_len", int),
        lr=_resolve(args, "lr", float),
        seed=_resolve(args, "seed", int),
        log_every=_resolve(args, "log_every", int),
    )
    result = train(model, args.data, args.out, tcfg, log=print)
    print(f"checkpoint: {result.checkpoint}  ({result.seconds:.1f}s)")
    return 0


def _cmd_eval(args) -> int:
    from .training import eval_report_text, evaluate_policy, load_checkpoint

    model, _ = load_checkpoint(args.ckpt)
    result = evaluate_policy(
        model,
        args.task,
        n=_resolve(args, "n", int),
        seed=_resolve(args, "seed", int),
        variant=_resolve(args, "variant", str),
        step_cap=_resolve(args, "step_cap", int),
    )
    _emit(eval_report_text([result]), args.out)
    return 0


def _cmd_report(args) -> int:
    rows: list[str] = []
    header = None
    for path in args.inputs:
        lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
        if not lines:
            continue
        if header is None:
            header = lines[0]
        rows.extend(lines[1:])
    if header is None:
        raise ValueError("no report rows found in inputs")
    _emit("# combined evaluation\n" + "\n".join([header] + rows) + "\n", args.out)
    return 0


def _cmd_viz_slots(args) -> int:
    import numpy as np
    import torch

    from .expert import expert_rollout
    from .tasks import get_task
    from .training import load_checkpoint
    from .viz import save_slot_panels

    model, _ = load_checkpoint(args.ckpt)
    task = get_task(args.task)
    roll = expert_rollout(task, _resolve(args, "seed", int), variant=_resolve(args, "variant", str))
    stacked = np.stack(roll.frames)  # (T+1, 64, 64, 3) float32 in [0, 1]
    frames = torch.from_numpy(stacked).permute(0, 3, 1, 2)[None]
    with torch.no_grad():
        if hasattr(model, "encode_sequence"):
            out = model.encode_sequence(frames, generator=torch.Generator().manual_seed(0))
            attn = out["attn"][0]
        else:
            model(frames[0], torch.zeros(frames.shape[1], dtype=torch.long))
            attn = model.last_attn
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    every = _resolve(args, "every", int)
    written = []
    for t in range(0, frames.shape[1], every):
        path = out_dir / f"{args.task}_frame{t:04d}.png"
        save_slot_panels(path, stacked[t], attn[t].numpy())
        written.append(path.name)
    (out_dir / "index.txt").write_text("\n".join(written) + "\n")
    print(f"wrote {len(written)} panels under {out_dir}")
    return 0


def _cmd_token_report(args) -> int:
    from .audit import token_report_text

    _emit(token_report_text(), args.out)
    return 0


def _cmd_audit(args) -> int:
    from .audit import aliasing_report_text, find_aliased_pairs
    from .data import load_index, read_episode

    paths = [p for split in load_index(args.data).values() for p in split]
    episodes = (read_episode(p) for p in paths)
    report = find_aliased_pairs(episodes, eps=_resolve(args, "eps", float))
    _emit(aliasing_report_text(report), args.out)
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "report": _cmd_report,
    "viz-slots": _cmd_viz_slots,
    "token-report": _cmd_token_report,
    "audit-aliasing": _cmd_audit,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config(args, parser)
        return _COMMANDS[args.command](args)
    except Exception as exc:  # runtime failure -> exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
