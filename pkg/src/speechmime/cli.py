"""Subcommand CLI: pipelines over a self-describing run directory.

Every artifact a command writes is stamped with the active seed and the
config hash, and everything except the timestamp sidecar (meta.json) is
byte-stable under re-execution. Flags win over the config file, which
wins over the snapshot already in the run directory, which wins over
defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import (coerce, config_hash, parse_config_file, read_settings,
                     resolve_settings, write_settings)
from .corpus import Manifest, ToyGrammar, default_grammar, gen_toy_corpus, read_manifest, \
    write_manifest
from .errors import ConfigError, DataError, NumericError, SealedModelError, SpeechMimeError
from .evalbench import (EvalItem, PromptFamily, Report, build_asr_set, build_families,
                        build_math_set, build_prompt_gen_set, build_role_set,
                        load_math_shot, load_role_templates, read_math_problems, run_eval)
from .imitation import (RunConfig, TeacherCache, TrainState, fill_targets, imitation_match,
                        load_train_state, prompt_hash, teacher_generate, train)
from .model import Connector, LMConfig, MixedSequence, SpeechEncoder, TinyLM, param_checksum
from .optim import Adam
from .pretrain import PretrainConfig, build_default_tokenizer, build_pretrain_renders, \
    pretrain_toy_lm
from .reporting import (emit_report, read_report, render_ablation_figure, render_loss_figure,
                        render_score_figure)
from .sampling import GenerationConfig, generate
from .synth import SynthConfig
from .tasks import MixWeights, TaskConfig, TaskMixer, TrainingExample, build_examples, \
    load_task_config
from .tokenizer import Tokenizer

log = logging.getLogger(__name__)

EVAL_SUITES = ("asr", "prompt_gen", "role", "math0", "math1")

# Ablation grid: which tasks train the connector, and whether the
# speech-text mixing coin is live. The final row is the full recipe.
ABLATION_GRID = (
    ("C", ("continuation",), False),
    ("R", ("rewriting",), False),
    ("S", ("selecting",), False),
    ("C+R+S", ("continuation", "rewriting", "selecting"), False),
    ("ASR+C+R+S", ("asr_sft", "continuation", "rewriting", "selecting"), False),
    ("ASR+C+R+S+I", ("asr_sft", "continuation", "rewriting", "selecting"), True),
)

_ROLE_SET_TAG = 0x5E7C


@dataclass
class RunDirectory:
    """Fixed layout for one experiment's artifacts."""

    path: Path

    def __post_init__(self):
        self.path = Path(self.path)

    @property
    def config(self) -> Path:
        return self.path / "config.json"

    @property
    def meta(self) -> Path:
        return self.path / "meta.json"

    @property
    def manifest(self) -> Path:
        return self.path / "manifest.jsonl"

    @property
    def tokenizer(self) -> Path:
        return self.path / "tokenizer.tsv"

    @property
    def lm(self) -> Path:
        return self.path / "lm.smck"

    @property
    def teacher_cache(self) -> Path:
        return self.path / "teacher_cache.jsonl"

    @property
    def checkpoints(self) -> Path:
        return self.path / "checkpoints"

    @property
    def logs(self) -> Path:
        return self.path / "logs"

    @property
    def reports(self) -> Path:
        return self.path / "reports"

    def ensure(self) -> None:
        for d in (self.path, self.checkpoints, self.logs, self.reports):
            d.mkdir(parents=True, exist_ok=True)

    def record_timing(self, command: str, started: float, finished: float) -> None:
        """Wall-clock bookkeeping. Timestamps live only here so that every
        other artifact stays byte-identical across reruns."""
        obj = {}
        if self.meta.exists():
            obj = json.loads(self.meta.read_text(encoding="utf-8"))
        fmt = "%Y-%m-%dT%H:%M:%SZ"
        obj.setdefault("timings", {})[command] = {
            "started_utc": time.strftime(fmt, time.gmtime(started)),
            "finished_utc": time.strftime(fmt, time.gmtime(finished)),
            "seconds": round(finished - started, 3),
        }
        self.meta.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n",
                             encoding="utf-8")

    def latest_checkpoint(self) -> Path | None:
        found = sorted(self.checkpoints.glob("state_*.smck"))
        return found[-1] if found else None


@dataclass
class World:
    """Deterministic context shared by every pipeline stage."""

    settings: dict
    hash: str
    grammar: ToyGrammar
    synth_cfg: SynthConfig
    task_cfg: TaskConfig
    families: list[PromptFamily]
    role_templates: dict[str, list[str]]


def build_world(settings: dict) -> World:
    grammar = default_grammar(seed=settings["corpus.seed"])
    synth_cfg = SynthConfig(frames_per_char=settings["synth.frames_per_char"],
                            d_feat=settings["synth.d_feat"],
                            jitter=settings["synth.jitter"],
                            seed=settings["synth.seed"])
    task_cfg = load_task_config(settings["tasks.config"] or None)
    return World(settings=settings, hash=config_hash(settings), grammar=grammar,
                 synth_cfg=synth_cfg, task_cfg=task_cfg,
                 families=build_families(grammar),
                 role_templates=load_role_templates())


def build_lm(settings: dict, vocab_size: int) -> TinyLM:
    cfg = LMConfig(vocab_size=vocab_size, d_model=settings["lm.d_model"],
                   n_layers=settings["lm.layers"], n_heads=settings["lm.heads"],
                   context=settings["lm.context"])
    return TinyLM(cfg, seed=settings["lm.seed"])


def build_encoder(settings: dict) -> SpeechEncoder:
    return SpeechEncoder(d_feat=settings["synth.d_feat"],
                         d_enc=settings["encoder.d_enc"],
                         seed=settings["encoder.seed"])


def build_connector(settings: dict) -> Connector:
    return Connector(d_enc=settings["encoder.d_enc"], d_model=settings["lm.d_model"],
                     hidden=settings["connector.hidden"], seed=settings["connector.seed"])


def save_toy_lm(path: Path, lm: TinyLM, losses: np.ndarray, stamp: dict) -> None:
    arrays = {f"lm.{name}": tensor.detach().cpu().numpy()
              for name, tensor in sorted(lm.state_dict().items())}
    arrays["loss_history"] = np.asarray(losses, dtype=np.float32)
    meta = {"kind": "toy_lm", "sealed": lm.sealed, "vocab_size": lm.cfg.vocab_size,
            "checksum": param_checksum(lm)}
    meta.update(stamp)
    save_checkpoint(path, arrays, meta=meta)


def load_toy_lm(path: Path, settings: dict) -> tuple[TinyLM, dict, np.ndarray]:
    if not Path(path).exists():
        raise DataError(f"{path} not found; run the pretrain command first")
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "toy_lm":
        raise DataError(f"{path}: not a decoder checkpoint")
    lm = build_lm(settings, vocab_size=int(meta["vocab_size"]))
    sd = {name[len("lm."):]: torch.from_numpy(arrays[name].copy())
          for name in arrays if name.startswith("lm.")}
    lm.load_state_dict(sd)
    if meta.get("sealed"):
        lm.seal()
    if param_checksum(lm) != meta.get("checksum"):
        raise DataError(f"{path}: decoder parameters do not match the stored checksum")
    return lm, meta, arrays.get("loss_history", np.zeros(0, dtype=np.float32))


def _require(path: Path, producer: str) -> Path:
    if not Path(path).exists():
        raise DataError(f"{path} not found; run the {producer} command first")
    return path


def _stamp(settings: dict, seed: int) -> dict:
    return {"seed": int(seed), "config_hash": config_hash(settings)}


def load_run_tokenizer(rd: RunDirectory) -> Tokenizer:
    return Tokenizer.load(_require(rd.tokenizer, "synth"))


def load_run_manifest(rd: RunDirectory) -> Manifest:
    return read_manifest(_require(rd.manifest, "synth"))


def build_task_groups(world: World, manifest: Manifest, tokenizer: Tokenizer,
                      split: str, tasks: tuple[str, ...] | None = None) -> dict[str, list[TrainingExample]]:
    names = tasks if tasks is not None else world.task_cfg.active
    groups = {}
    for name in names:
        spec = world.task_cfg.spec(name)
        groups[name] = build_examples(manifest, spec, world.task_cfg.system_prompt,
                                      world.synth_cfg, tokenizer=tokenizer, split=split)
    return groups


def fill_teacher_targets(world: World, groups: dict[str, list[TrainingExample]],
                         cache: TeacherCache, lm_checksum: str) -> None:
    """Resolve cached stage-1 answers into the examples; error on gaps."""
    targets = {}
    missing = []
    for name, examples in sorted(groups.items()):
        if world.task_cfg.spec(name).target_source != "teacher":
            continue
        for ex in examples:
            phash = prompt_hash(ex.system_prompt, ex.task_prompt, ex.transcript)
            hit = cache.get(ex.example_id, phash, lm_checksum)
            if hit is None:
                missing.append(ex.example_id)
            else:
                targets[ex.example_id] = hit
    if missing:
        shown = ", ".join(missing[:20])
        more = f" (+{len(missing) - 20} more)" if len(missing) > 20 else ""
        raise DataError(f"teacher cache is missing {len(missing)} answers; "
                        f"run the teacher command first: {shown}{more}")
    for examples in groups.values():
        fill_targets(examples, targets)


class ConnectorStudent:
    """Speech-conditioned generation behind the evaluation interface."""

    def __init__(self, lm: TinyLM, encoder: SpeechEncoder, connector: Connector,
                 tokenizer: Tokenizer):
        self.lm = lm
        self.encoder = encoder
        self.connector = connector
        self.tokenizer = tokenizer

    def generate_text(self, item: EvalItem, prefix: MixedSequence,
                      cfg: GenerationConfig, rng: np.random.Generator) -> str:
        gen = generate(self.lm, self.encoder, self.connector, prefix, cfg, rng)
        return self.tokenizer.decode(gen.token_ids)


def _run_config(settings: dict, interleave_prob: float | None = None,
                steps: int | None = None) -> RunConfig:
    raw_steps = settings["train.steps"]
    return RunConfig(
        learning_rate=settings["train.learning_rate"],
        batch_size=settings["train.batch_size"],
        epochs=settings["train.epochs"],
        interleave_prob=settings["train.interleave_prob"] if interleave_prob is None
        else interleave_prob,
        span_ratio=(settings["train.span_lo"], settings["train.span_hi"]),
        generation=_gen_config(settings),
        seed=settings["train.seed"],
        steps=steps if steps is not None else (None if raw_steps < 0 else raw_steps),
        checkpoint_every=settings["train.checkpoint_every"],
        gate=settings["train.gate"],
    )


def _gen_config(settings: dict) -> GenerationConfig:
    return GenerationConfig(max_new_tokens=settings["gen.max_new_tokens"],
                            temperature=settings["gen.temperature"],
                            top_p=settings["gen.top_p"])


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, rd: RunDirectory, settings: dict) -> int:
    world = build_world(settings)
    stamp = _stamp(settings, settings["corpus.seed"])
    base = gen_toy_corpus(world.grammar, settings["corpus.n"])
    manifest = Manifest(entries=base.entries, header_extra=dict(stamp))
    write_manifest(manifest, rd.manifest)
    tokenizer = build_default_tokenizer(world.grammar, world.task_cfg, world.families,
                                        world.role_templates)
    tokenizer.save(rd.tokenizer, header=stamp)
    counts = {}
    for utt in manifest.entries:
        counts[utt.split] = counts.get(utt.split, 0) + 1
    print(f"wrote {rd.manifest} with {len(manifest.entries)} utterances "
          f"({', '.join(f'{k}={v}' for k, v in sorted(counts.items()))})")
    print(f"wrote {rd.tokenizer} with {tokenizer.vocab_size} entries")
    return 0


def cmd_pretrain(args, rd: RunDirectory, settings: dict) -> int:
    world = build_world(settings)
    manifest = load_run_manifest(rd)
    tokenizer = load_run_tokenizer(rd)
    stamp = _stamp(settings, settings["pretrain.seed"])
    pcfg = PretrainConfig(steps=settings["pretrain.steps"],
                          batch_size=settings["pretrain.batch_size"],
                          lr=settings["pretrain.lr"],
                          seed=settings["pretrain.seed"],
                          role_fills=settings["pretrain.role_fills"])
    renders = build_pretrain_renders(world.grammar, manifest, world.task_cfg, tokenizer,
                                     world.families, world.role_templates, pcfg,
                                     frames_per_char=settings["synth.frames_per_char"],
                                     context=settings["lm.context"])
    lm = build_lm(settings, vocab_size=tokenizer.vocab_size)
    print(f"pretraining decoder on {len(renders)} rendered sequences "
          f"for {pcfg.steps} steps")
    losses = pretrain_toy_lm(renders, lm, pcfg)
    save_toy_lm(rd.lm, lm, losses, stamp)
    with open(rd.logs / "pretrain_log.jsonl", "w", encoding="utf-8") as f:
        f.write(json.dumps({"kind": "pretrain_log", **stamp}, sort_keys=True) + "\n")
        for step, loss in enumerate(losses):
            f.write(json.dumps({"step": step, "loss": round(float(loss), 6)}) + "\n")
    tail = float(np.mean(losses[-50:])) if len(losses) >= 50 else float(losses[-1])
    print(f"wrote {rd.lm} (checksum {param_checksum(lm)[:12]}, "
          f"final loss {tail:.4f} nats/token)")
    return 0


def cmd_teacher(args, rd: RunDirectory, settings: dict) -> int:
    world = build_world(settings)
    manifest = load_run_manifest(rd)
    tokenizer = load_run_tokenizer(rd)
    lm, lm_meta, _ = load_toy_lm(rd.lm, settings)
    encoder = build_encoder(settings)
    connector = build_connector(settings)
    stamp = _stamp(settings, settings["pretrain.seed"])
    cache = TeacherCache(rd.teacher_cache, header=stamp)
    before = len(cache)
    teacher_specs = [s for s in world.task_cfg.active_specs() if s.target_source == "teacher"]
    if not teacher_specs:
        print("no teacher-sourced tasks in the active set; nothing to do")
        return 0
    # Answers are cached for every split: training consumes the train split
    # and the match summaries need references on both eval splits.
    for spec in teacher_specs:
        for split in ("train", "held_in_eval", "held_out_eval"):
            examples = build_examples(manifest, spec, world.task_cfg.system_prompt,
                                      world.synth_cfg, tokenizer=tokenizer, split=split)
            teacher_generate(examples, lm, encoder, connector, tokenizer, cache,
                             max_target_tokens=spec.max_target_tokens)
            print(f"task {spec.name:<14} split {split:<14} answers {len(examples)}")
    cache.flush()
    print(f"cache {rd.teacher_cache}: {len(cache)} entries "
          f"({len(cache) - before} new, decoder {lm_meta['checksum'][:12]})")
    return 0


def cmd_train(args, rd: RunDirectory, settings: dict) -> int:
    world = build_world(settings)
    manifest = load_run_manifest(rd)
    tokenizer = load_run_tokenizer(rd)
    lm, _, _ = load_toy_lm(rd.lm, settings)
    encoder = build_encoder(settings)
    connector = build_connector(settings)
    stamp = _stamp(settings, settings["train.seed"])

    groups = build_task_groups(world, manifest, tokenizer, "train")
    cache = TeacherCache(_require(rd.teacher_cache, "teacher"))
    lm_checksum = param_checksum(lm)
    fill_teacher_targets(world, groups, cache, lm_checksum)

    rcfg = _run_config(settings)
    optimizer = Adam(list(connector.parameters()), lr=rcfg.learning_rate)
    state = TrainState(connector=connector, optimizer=optimizer)
    if args.resume:
        latest = rd.latest_checkpoint()
        if latest is None:
            raise DataError(f"--resume: no checkpoints under {rd.checkpoints}")
        state = load_train_state(latest, connector, optimizer)
        print(f"resuming from {latest} at step {state.step}")

    mixer = TaskMixer(groups, MixWeights.uniform(groups), seed=rcfg.seed)
    n_examples = sum(len(v) for v in groups.values())
    total = rcfg.resolve_steps(n_examples)
    log_path = rd.logs / "train_log.jsonl"
    if not log_path.exists():
        log_path.write_text(json.dumps({"kind": "train_log", **stamp},
                                       sort_keys=True) + "\n", encoding="utf-8")
    print(f"training connector for {total} steps "
          f"(batch {rcfg.batch_size}, lr {rcfg.learning_rate}, "
          f"interleave {rcfg.interleave_prob})")
    try:
        state = train(mixer, rcfg, state, lm, encoder, tokenizer, world.synth_cfg,
                      checkpoint_dir=rd.checkpoints, log_path=log_path,
                      checkpoint_meta=stamp)
    except NumericError as e:
        dump = rd.logs / "failed_batch.json"
        dump.write_text(json.dumps({"error": str(e), **stamp}, sort_keys=True) + "\n",
                        encoding="utf-8")
        raise NumericError(f"{e}; details at {dump}") from e

    frozen_now = param_checksum(lm)
    if frozen_now != lm_checksum:
        raise DataError("decoder parameters changed during connector training")
    print(f"decoder checksum   {frozen_now} (frozen)")
    print(f"encoder checksum   {param_checksum(encoder)} (frozen)")
    print(f"connector checksum {param_checksum(connector)} (trained, "
          f"{state.step} steps)")

    held_in = build_task_groups(world, manifest, tokenizer, "held_in_eval")
    fill_teacher_targets(world, held_in, cache, lm_checksum)
    flat = [ex for name in sorted(held_in) for ex in held_in[name]]
    match = imitation_match(flat, lm, encoder, connector, tokenizer,
                            max_new_tokens=settings["gen.max_new_tokens"])
    summary = {"step": state.step, "match": match, **stamp}
    (rd.logs / "held_in_match.json").write_text(
        json.dumps(summary, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    print(f"held-in exact match {match['overall']['exact_match']:.3f} "
          f"over {match['overall']['n']} examples "
          f"(similarity {match['overall']['similarity']:.3f})")
    return 0


def _suite_items(suite: str, world: World, manifest: Manifest,
                 settings: dict) -> list[EvalItem]:
    held_out = manifest.by_split("held_out_eval")
    if suite == "asr":
        n = settings["eval.asr_items"]
        if len(held_out) < n:
            raise DataError(f"asr suite wants {n} utterances, split has {len(held_out)}")
        prompt = world.task_cfg.spec("asr_sft").prompt
        return build_asr_set(held_out[:n], world.synth_cfg, prompt)
    if suite == "prompt_gen":
        return build_prompt_gen_set(held_out[:10], world.families, world.synth_cfg)
    if suite == "role":
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([settings["eval.seed"], _ROLE_SET_TAG])))
        return build_role_set(world.role_templates, world.grammar, world.synth_cfg, rng)
    if suite == "math0":
        return build_math_set(read_math_problems(), world.synth_cfg, shots=0)
    if suite == "math1":
        return build_math_set(read_math_problems(), world.synth_cfg, shots=1,
                              shot_text=load_math_shot())
    raise ConfigError(f"unknown eval suite {suite!r}; choose from {', '.join(EVAL_SUITES)}")


def cmd_eval(args, rd: RunDirectory, settings: dict) -> int:
    suites = EVAL_SUITES if args.suites == "all" else tuple(
        s.strip() for s in args.suites.split(",") if s.strip())
    for s in suites:
        if s not in EVAL_SUITES:
            raise ConfigError(f"unknown eval suite {s!r}; choose from "
                              f"{', '.join(EVAL_SUITES)}")
    world = build_world(settings)
    manifest = load_run_manifest(rd)
    tokenizer = load_run_tokenizer(rd)
    lm, _, _ = load_toy_lm(rd.lm, settings)
    encoder = build_encoder(settings)
    connector = build_connector(settings)

    if args.checkpoint:
        ckpt = Path(args.checkpoint)
        if not ckpt.exists():
            raise DataError(f"checkpoint {ckpt} not found")
    else:
        ckpt = rd.latest_checkpoint()
        if ckpt is None:
            raise DataError(f"no checkpoints under {rd.checkpoints}; "
                            "run the train command first")
    optimizer = Adam(list(connector.parameters()), lr=1.0)
    state = load_train_state(ckpt, connector, optimizer)
    checksum = param_checksum(connector)
    stamp = _stamp(settings, settings["eval.seed"])

    student = ConnectorStudent(lm, encoder, connector, tokenizer)
    gen_cfg = _gen_config(settings)
    summary_scores: dict[str, float] = {}
    for suite in suites:
        items = _suite_items(suite, world, manifest, settings)
        metadata = {**stamp, "suite": suite, "checkpoint": ckpt.name,
                    "checkpoint_checksum": checksum, "step": state.step}
        report = run_eval(student, items, tokenizer, world.task_cfg.system_prompt,
                          gen_cfg, seed=settings["eval.seed"], families=world.families,
                          metadata=metadata)
        emit_report(report, rd.reports / f"{suite}.json", format="machine")
        emit_report(report, rd.reports / f"{suite}.txt", format="human")
        key = "asr_wer" if suite == "asr" else suite
        source = "asr_wer" if suite == "asr" else ("math" if suite.startswith("math")
                                                  else suite)
        summary_scores[key] = report.scores[source]
        print(f"suite {suite:<11} {key} = {report.scores[source]:.3f} "
              f"({len(items)} items)")

    summary = Report(scores=summary_scores, verdicts=[],
                     metadata={**stamp, "checkpoint": ckpt.name,
                               "checkpoint_checksum": checksum, "step": state.step,
                               "suites": list(suites)})
    emit_report(summary, rd.reports / "summary.json", format="machine")
    emit_report(summary, rd.reports / "summary.txt", format="human")
    render_score_figure(summary, rd.reports / "scores.png")
    if state.losses:
        render_loss_figure(state.losses, rd.reports / "loss_curve.png",
                           title="connector training loss")
    print(f"wrote reports and figures under {rd.reports}")
    return 0


def cmd_ablate(args, rd: RunDirectory, settings: dict) -> int:
    world = build_world(settings)
    manifest = load_run_manifest(rd)
    tokenizer = load_run_tokenizer(rd)
    lm, _, _ = load_toy_lm(rd.lm, settings)
    encoder = build_encoder(settings)
    cache = TeacherCache(_require(rd.teacher_cache, "teacher"))
    lm_checksum = param_checksum(lm)

    all_tasks = sorted({name for _, names, _ in ABLATION_GRID for name in names})
    for name in all_tasks:
        if name not in world.task_cfg.specs:
            raise ConfigError(f"ablation grid needs task {name!r}, "
                              "which the task config does not define")
    train_groups = build_task_groups(world, manifest, tokenizer, "train",
                                     tasks=tuple(all_tasks))
    fill_teacher_targets(world, train_groups, cache, lm_checksum)
    held_groups = build_task_groups(world, manifest, tokenizer, "held_out_eval",
                                    tasks=tuple(all_tasks))
    fill_teacher_targets(world, held_groups, cache, lm_checksum)

    steps = settings["ablate.steps"]
    gen_cfg = _gen_config(settings)
    stamp = _stamp(settings, settings["train.seed"])
    rows = []
    for label, names, interleaved in ABLATION_GRID:
        if not names:
            raise ConfigError(f"ablation row {label!r} has no tasks")
        connector = build_connector(settings)
        optimizer = Adam(list(connector.parameters()),
                         lr=settings["train.learning_rate"])
        rcfg = _run_config(settings, steps=steps,
                           interleave_prob=settings["train.interleave_prob"]
                           if interleaved else 0.0)
        mixer = TaskMixer({n: train_groups[n] for n in names},
                          MixWeights.uniform(names), seed=rcfg.seed)
        state = TrainState(connector=connector, optimizer=optimizer)
        print(f"row {label}: {steps} steps on {'+'.join(names)} "
              f"(interleave {rcfg.interleave_prob})")
        state = train(mixer, rcfg, state, lm, encoder, tokenizer, world.synth_cfg)

        flat = [ex for n in names for ex in held_groups[n]]
        match = imitation_match(flat, lm, encoder, connector, tokenizer,
                                max_new_tokens=settings["gen.max_new_tokens"])
        student = ConnectorStudent(lm, encoder, connector, tokenizer)
        checksum = param_checksum(connector)
        scores = {}
        for suite in ("asr", "prompt_gen"):
            items = _suite_items(suite, world, manifest, settings)
            rep = run_eval(student, items, tokenizer, world.task_cfg.system_prompt,
                           gen_cfg, seed=settings["eval.seed"], families=world.families,
                           metadata={**stamp, "suite": suite, "row": label,
                                     "checkpoint_checksum": checksum})
            scores.update(rep.scores)
        rows.append({
            "label": label,
            "tasks": list(names),
            "interleave_prob": rcfg.interleave_prob,
            "seed": rcfg.seed,
            "steps": steps,
            "held_out_match": match["overall"]["exact_match"],
            "held_out_similarity": match["overall"]["similarity"],
            "asr_wer": scores["asr_wer"],
            "prompt_gen": scores["prompt_gen"],
            "connector_checksum": checksum,
        })

    obj = {"format_version": 1, **stamp, "rows": rows}
    (rd.reports / "ablation.json").write_text(
        json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    (rd.reports / "ablation.txt").write_text(_ablation_table(rows), encoding="utf-8")
    render_ablation_figure(rows, rd.reports / "ablation.png")
    print(_ablation_table(rows), end="")
    print(f"wrote {rd.reports / 'ablation.json'} and figure")
    return 0


def _ablation_table(rows: list[dict]) -> str:
    lines = [f"{'row':<14}{'match':>8}{'sim':>8}{'wer':>8}{'prompt':>8}"]
    lines.append("-" * 46)
    for r in rows:
        lines.append(f"{r['label']:<14}{r['held_out_match']:>8.3f}"
                     f"{r['held_out_similarity']:>8.3f}{r['asr_wer']:>8.3f}"
                     f"{r['prompt_gen']:>8.3f}")
    return "\n".join(lines) + "\n"


def cmd_report(args, rd: RunDirectory, settings: dict) -> int:
    """Re-render human tables and figures from the machine artifacts."""
    written = []
    for path in sorted(rd.reports.glob("*.json")):
        if path.name == "ablation.json":
            obj = json.loads(path.read_text(encoding="utf-8"))
            (rd.reports / "ablation.txt").write_text(_ablation_table(obj["rows"]),
                                                     encoding="utf-8")
            written.append(render_ablation_figure(obj["rows"],
                                                  rd.reports / "ablation.png"))
            written.append(rd.reports / "ablation.txt")
            continue
        report = read_report(path)
        written.append(emit_report(report, path.with_suffix(".txt"), format="human"))
        if path.stem == "summary":
            written.append(render_score_figure(report, rd.reports / "scores.png"))
    latest = rd.latest_checkpoint()
    if latest is not None:
        arrays, _ = load_checkpoint(latest)
        if "loss_history" in arrays and arrays["loss_history"].size:
            written.append(render_loss_figure(arrays["loss_history"],
                                              rd.reports / "loss_curve.png",
                                              title="connector training loss"))
    if rd.lm.exists():
        _, _, pre_losses = load_toy_lm(rd.lm, settings)
        if pre_losses.size:
            written.append(render_loss_figure(pre_losses,
                                              rd.reports / "pretrain_loss.png",
                                              title="decoder pretraining loss"))
    if not written:
        raise DataError(f"nothing to render under {rd.reports}; "
                        "run the eval or ablate command first")
    for p in written:
        print(f"wrote {p}")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing

_SEED_KEYS = {
    "synth": "corpus.seed",
    "pretrain": "pretrain.seed",
    "teacher": None,
    "train": "train.seed",
    "eval": "eval.seed",
    "ablate": "train.seed",
    "report": None,
}

_COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "teacher": cmd_teacher,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def _parse_overrides(pairs: list[str]) -> dict:
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        overrides[key.strip()] = coerce(key.strip(), raw.strip())
    return overrides


def _resolve(args, rd: RunDirectory) -> dict:
    """Snapshot < config file < --set/--seed; the snapshot is refreshed."""
    overrides = _parse_overrides(args.set)
    seed_key = _SEED_KEYS[args.command]
    if args.seed is not None:
        if seed_key is None:
            raise ConfigError(f"the {args.command} command has no seed; "
                              "it is fully determined by its inputs")
        overrides[seed_key] = args.seed
    if rd.config.exists():
        settings = read_settings(rd.config)
        if args.config:
            settings.update(parse_config_file(args.config))
        settings.update(overrides)
    else:
        settings = resolve_settings(args.config, overrides)
    write_settings(settings, rd.config)
    return settings


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=None,
                        help="key=value config file; overrides the run snapshot")
    common.add_argument("--run-dir", metavar="PATH", default="run",
                        help="artifact directory (default: ./run)")
    common.add_argument("--seed", type=int, default=None, metavar="N",
                        help="override the command's governing seed")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", default=[],
                        help="override one config key (repeatable; wins over --config)")
    common.add_argument("--resume", action="store_true",
                        help="continue train from the latest checkpoint")

    parser = argparse.ArgumentParser(
        prog="speechmime",
        description="Train and evaluate a toy speech connector for a frozen "
                    "text decoder.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common],
                   help="generate the corpus manifest and tokenizer")
    sub.add_parser("pretrain", parents=[common],
                   help="pretrain and seal the text decoder")
    sub.add_parser("teacher", parents=[common],
                   help="cache the decoder's text-input answers (stage 1)")
    sub.add_parser("train", parents=[common],
                   help="train the connector against cached answers (stage 2)")
    p_eval = sub.add_parser("eval", parents=[common],
                            help="run benchmark suites and write reports")
    p_eval.add_argument("--checkpoint", metavar="PATH", default=None,
                        help="connector state to evaluate (default: latest)")
    p_eval.add_argument("--suites", default="all",
                        help=f"comma list from {{{','.join(EVAL_SUITES)}}} or 'all'")
    sub.add_parser("ablate", parents=[common],
                   help="run the task-mix and interleaving comparison grid")
    sub.add_parser("report", parents=[common],
                   help="re-render tables and figures from machine reports")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname).1s %(name)s: %(message)s")
    started = time.time()
    rd = RunDirectory(Path(args.run_dir))
    try:
        rd.ensure()
        settings = _resolve(args, rd)
        code = _COMMANDS[args.command](args, rd, settings)
    except (ConfigError, SealedModelError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4
    except SpeechMimeError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    rd.record_timing(args.command, started, time.time())
    return code


if __name__ == "__main__":
    sys.exit(main())
