"""End-to-end pre-training pipeline.

Pure, seed-keyed batch assembly (tokenize, plan masks, corrupt) feeding a
serial training loop.  Because every random choice is keyed by
(seed, stream, step, slot), batch preparation can run on multiple workers
and a resumed run regenerates exactly the batches of an uninterrupted one.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .analysis import (
    RunReport,
    StepRecord,
    attention_cls_mass,
    attention_entropy,
    embedding_silhouette,
    emit_report,
)
from .config import RunConfig
from .corpus import DnaSequence, SyntheticCorpusConfig, generate_synthetic, parse_fasta, sample_windows
from .errors import ConfigInvalid
from .masking import (
    CorruptionPolicy,
    IGNORE_LABEL,
    MaskPlan,
    MaskSchedule,
    allowed_widths,
    apply_corruption,
    baseline_plan_mask,
    plan_mask,
)
from .model import (
    Batch,
    ModelConfig,
    ModelParams,
    forward,
    init_model,
    init_optimizer,
    load_checkpoint,
    save_checkpoint,
    train_step,
)
from .rng import STREAM_BATCH, STREAM_MASK, STREAM_PROBE, split
from .tokenizer import (
    CLS_ID,
    PAD_ID,
    SEP_ID,
    Strategy,
    Vocabulary,
    build_vocab,
    encode,
    wrap_for_model,
)

CHECKPOINT_DIRNAME = "checkpoint"


def schedule_from_config(run: RunConfig) -> MaskSchedule:
    return MaskSchedule(
        total_steps=run.training.total_steps,
        stage_fractions=run.masking.stage_fractions,
        base_width=run.masking.base_width,
        width_increment=run.masking.width_increment,
    )


def policy_from_config(run: RunConfig) -> CorruptionPolicy:
    pol = run.masking.policy
    return CorruptionPolicy(p_mask=pol.p_mask, p_random=pol.p_random, p_keep=pol.p_keep)


def build_windows(run: RunConfig) -> list[DnaSequence]:
    """Materialize the pre-training windows described by the corpus section."""
    c = run.corpus
    if c.source == "synthetic":
        sequences = generate_synthetic(
            SyntheticCorpusConfig(
                num_sequences=c.num_sequences,
                sequence_length=c.sequence_length,
                motifs=c.motifs,
                background=c.background,
                seed=run.training.seed,
            )
        )
    else:
        with open(c.fasta_path, "r", encoding="utf-8") as fh:
            sequences = parse_fasta(fh, lenient=c.lenient)
    windows: list[DnaSequence] = []
    for seq in sequences:
        windows.extend(
            sample_windows(
                seq,
                c.window_length,
                mode="tiled",
                stride=c.window_stride or c.window_length,
                max_n_fraction=c.max_n_fraction,
            )
        )
    if not windows:
        raise ConfigInvalid("corpus produced no usable windows")
    if c.window_length < run.tokenizer.k:
        raise ConfigInvalid(
            f"window_length {c.window_length} shorter than k={run.tokenizer.k}"
        )
    return windows


def prepare_frames(
    windows: list[DnaSequence],
    vocab: Vocabulary,
    strategy: Strategy,
    max_len: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Tokenize each window once and stack the framed id / mask arrays."""
    ids_rows, real_rows = [], []
    for w in windows:
        framed, real = wrap_for_model(encode(w, vocab, strategy), vocab, max_len)
        ids_rows.append(framed)
        real_rows.append(real)
    return np.stack(ids_rows), np.stack(real_rows)


def _frame_exclusion(ids: np.ndarray) -> np.ndarray:
    """Positions that must never be masked: [CLS], [SEP], and padding."""
    return np.isin(ids, (PAD_ID, CLS_ID, SEP_ID))


def _plan_for_slot(
    frame_ids: np.ndarray,
    step: int,
    slot: int,
    seed: int,
    p: float,
    mode: str,
    schedule: MaskSchedule,
    baseline_width: int,
    policy: CorruptionPolicy,
    vocab: Vocabulary,
) -> tuple[np.ndarray, np.ndarray, MaskPlan]:
    rng = split(seed, STREAM_MASK, step, slot)
    exclude = _frame_exclusion(frame_ids)
    if mode == "randommask":
        plan = plan_mask(frame_ids.shape[0], step, p, schedule, rng, exclude)
    else:
        plan = baseline_plan_mask(frame_ids.shape[0], p, baseline_width, rng, exclude, step)
    corrupted, labels = apply_corruption(frame_ids, plan, policy, vocab, rng)
    return corrupted, labels, plan


def assemble_batch(
    frames_ids: np.ndarray,
    frames_real: np.ndarray,
    step: int,
    run: RunConfig,
    schedule: MaskSchedule,
    policy: CorruptionPolicy,
    vocab: Vocabulary,
) -> tuple[Batch, list[MaskPlan]]:
    """Deterministically sample and corrupt one training batch for ``step``."""
    tr = run.training
    picker = split(tr.seed, STREAM_BATCH, step)
    chosen = picker.integers(0, frames_ids.shape[0], size=tr.batch_size)

    def prep(slot_and_index):
        slot, widx = slot_and_index
        return _plan_for_slot(
            frames_ids[widx], step, slot, tr.seed, run.masking.p, run.masking.mode,
            schedule, run.tokenizer.k, policy, vocab,
        )

    items = list(enumerate(chosen))
    if tr.workers > 1:
        with ThreadPoolExecutor(max_workers=tr.workers) as pool:
            results = list(pool.map(prep, items))
    else:
        results = [prep(it) for it in items]

    ids = np.stack([r[0] for r in results])
    labels = np.stack([r[1] for r in results])
    plans = [r[2] for r in results]
    real = frames_real[chosen]
    return Batch(ids=ids, padding_mask=real, labels=labels), plans


def attention_probe(
    params: ModelParams,
    run: RunConfig,
    schedule: MaskSchedule,
    policy: CorruptionPolicy,
    vocab: Vocabulary,
    frames: tuple[np.ndarray, np.ndarray],
    step: int,
    num_sequences: int = 16,
) -> dict:
    """Attention diagnostics on a deterministic probe batch at ``step``.

    Masks are drawn from the probe stream (not the training stream), the
    trace comes from a full forward pass, and metrics average over masked
    query positions per the under-training analysis.
    """
    frames_ids, frames_real = frames
    picker = split(run.training.seed, STREAM_PROBE, 0)
    chosen = picker.integers(0, frames_ids.shape[0], size=num_sequences)
    rows, labels_rows = [], []
    for slot, widx in enumerate(chosen):
        rng = split(run.training.seed, STREAM_PROBE, 1 + slot)
        frame = frames_ids[widx]
        exclude = _frame_exclusion(frame)
        if run.masking.mode == "randommask":
            plan = plan_mask(frame.shape[0], step, run.masking.p, schedule, rng, exclude)
        else:
            plan = baseline_plan_mask(frame.shape[0], run.masking.p, run.tokenizer.k,
                                      rng, exclude, step)
        corrupted, labels = apply_corruption(frame, plan, policy, vocab, rng)
        rows.append(corrupted)
        labels_rows.append(labels)
    ids = np.stack(rows)
    labels = np.stack(labels_rows)
    real = frames_real[chosen]
    trace = forward(params, ids, real)
    masked = labels != IGNORE_LABEL
    return {
        "cls_mass": [float(v) for v in attention_cls_mass(trace, masked)],
        "entropy": [float(v) for v in attention_entropy(trace, masked)],
        "num_masked_queries": int(masked.sum()),
        "probe_step": int(step),
    }


@dataclass
class PretrainResult:
    report: RunReport
    report_json: str
    loss_csv: str
    checkpoint_dir: str
    params: ModelParams


def _configs_compatible(saved: dict | None, current: dict) -> bool:
    if saved is None:
        return True
    a, b = dict(saved), dict(current)
    # Worker count may differ between sessions; it cannot change outputs.
    for cfg in (a, b):
        cfg["training"] = {k: v for k, v in cfg.get("training", {}).items() if k != "workers"}
    return a == b


def pretrain_run(
    run: RunConfig,
    out_dir: str,
    resume_from: str | None = None,
    stop_after_step: int | None = None,
) -> PretrainResult:
    """Pre-train per the config; write a checkpoint and a run report.

    The mask schedule is always keyed to ``training.total_steps``;
    ``stop_after_step`` halts the loop early without changing the schedule,
    so a stopped run can be resumed later.  With ``resume_from``, training
    continues from the checkpoint's step using its optimizer state; the
    regenerated batches match an uninterrupted run exactly, so the loss
    curve is bit-identical.
    """
    vocab = build_vocab(run.tokenizer.k)
    strategy = Strategy(run.tokenizer.strategy)
    schedule = schedule_from_config(run)
    policy = policy_from_config(run)
    windows = build_windows(run)
    frames_ids, frames_real = prepare_frames(windows, vocab, strategy, run.model.max_len)

    end_step = run.training.total_steps
    if stop_after_step is not None:
        if stop_after_step < 1:
            raise ConfigInvalid(f"stop_after_step must be >= 1, got {stop_after_step}")
        end_step = min(end_step, stop_after_step)

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.opt_state is None:
            raise ConfigInvalid(f"checkpoint {resume_from} lacks optimizer state; cannot resume")
        if not _configs_compatible(ckpt.run_config, run.to_dict()):
            raise ConfigInvalid(
                "resume config differs from the checkpoint's; a resumed run must "
                "keep the original corpus/masking/model/training settings"
            )
        params, opt, start_step = ckpt.params, ckpt.opt_state, ckpt.step
        if start_step >= end_step:
            raise ConfigInvalid(
                f"checkpoint already at step {start_step} >= end step {end_step}"
            )
    else:
        model_cfg = ModelConfig(
            vocab_size=vocab.size,
            num_layers=run.model.num_layers,
            num_heads=run.model.num_heads,
            hidden_dim=run.model.hidden_dim,
            ff_dim=run.model.ff_dim,
            max_len=run.model.max_len,
            dropout_rate=run.model.dropout_rate,
            tie_embeddings=run.model.tie_embeddings,
            dtype=run.model.dtype,
            seed=run.training.seed,
        )
        params = init_model(model_cfg)
        opt = init_optimizer(
            params, lr=run.training.lr, weight_decay=run.training.weight_decay
        )
        start_step = 0

    records: list[StepRecord] = []
    for step in range(start_step + 1, end_step + 1):
        batch, _plans = assemble_batch(
            frames_ids, frames_real, step, run, schedule, policy, vocab
        )
        loss = train_step(params, opt, batch)
        records.append(
            StepRecord(
                step=step,
                stage=schedule.stage_of(step),
                widths=allowed_widths(step, schedule),
                loss=float(loss),
            )
        )

    final_step = end_step
    attention = attention_probe(
        params, run, schedule, policy, vocab, (frames_ids, frames_real), final_step
    )
    silhouette = None
    if run.tokenizer.k == 6:
        silhouette = embedding_silhouette(params["tok_emb"][vocab.first_kmer_id :])

    report = RunReport(
        config=run.to_dict(),
        seeds={"root": run.training.seed},
        stage_boundaries=schedule.boundaries(),
        records=records,
        attention=attention,
        silhouette=silhouette,
    )
    os.makedirs(out_dir, exist_ok=True)
    ckpt_dir = save_checkpoint(
        os.path.join(out_dir, CHECKPOINT_DIRNAME),
        params,
        opt_state=opt,
        step=final_step,
        run_config=run.to_dict(),
    )
    json_path, csv_path = emit_report(report, out_dir)
    return PretrainResult(
        report=report,
        report_json=json_path,
        loss_csv=csv_path,
        checkpoint_dir=ckpt_dir,
        params=params,
    )
