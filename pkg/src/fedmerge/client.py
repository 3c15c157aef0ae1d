"""One client's per-round procedure.

Each round a client runs two phases per the merge schedule:

  Phase 1 (merging): iterate the epoch's batches; for each batch, produce the
  merge weights from the adapter, form the merged rows, take the BCE loss of
  the batch under (p, merged), and step only the adapter parameters with
  learning rate beta (p, the local table, and the global table stay frozen).
  After the loop the final adapter output is applied once to the frozen
  (local, global) pair to produce the working table.

  Phase 2 (training): with the working table as the model, iterate batches
  updating p and the working table (adapter frozen). The working table
  becomes the new local table and is uploaded.

Under merge_schedule='first_epoch' (default) phase 1 runs only in epoch 1 and
later epochs train the working table directly; under 'every_epoch' both
phases run each epoch with the current working table as the local base.
Under SR the phase-1 loop is skipped and the working table is the global
table. Both phases of an epoch iterate the same shuffled example list; all
streams are derived from (seed, client, round, epoch), so results are
bit-reproducible and independent of scheduling.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import ClientSplit, epoch_examples
from .merging import AdapterNet, MergeScheme, build_merge_input, merge_models
from .model import OptimizerState, batch_terms, clip_gradient, sigmoid
from .privacy import LdpConfig

logger = logging.getLogger(__name__)


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class ClientState:
    """Everything a client keeps across rounds; p and the adapter never leave."""

    index: int
    user_vec: np.ndarray  # (d,)
    local_table: np.ndarray  # (m, d)
    adapter: AdapterNet | None
    opt_embed: OptimizerState  # over [user_vec, local table]
    opt_adapter: OptimizerState | None
    split: ClientSplit


@dataclass(frozen=True)
class RoundConfig:
    epochs: int = 10
    batch_size: int = 256
    lr: float = 0.1  # eta, embedding learning rate
    adapter_lr: float = 0.1  # beta
    negatives: int = 4
    merge_schedule: str = "first_epoch"
    scheme: MergeScheme = field(default_factory=lambda: MergeScheme("EM"))
    seed: int = 0
    ldp: LdpConfig = field(default_factory=LdpConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.adapter_lr < 0:
            raise ValueError("adapter_lr must be >= 0 (0 freezes the adapter)")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.merge_schedule not in ("first_epoch", "every_epoch"):
            raise ValueError(f"unknown merge_schedule {self.merge_schedule!r}")


@dataclass
class ClientRoundResult:
    upload: np.ndarray  # (m, d) item table, the only model content uploaded
    train_loss: float  # mean per-example BCE over the round's phase-2 batches
    example_count: int


def _epoch_batches(state, cfg, round_index, epoch):
    """The epoch's shuffled batches, grouped once and shared by both phases.

    Each entry is (uniq_items, inverse_index, labels); batches are
    contiguous slices of the shuffled example list.
    """
    items, labels = epoch_examples(
        state.split, cfg.negatives, epoch, round_index, cfg.seed, state.index
    )
    out = []
    for start in range(0, len(items), cfg.batch_size):
        b_items = items[start : start + cfg.batch_size]
        uniq, inv = np.unique(b_items, return_inverse=True)
        out.append((uniq, inv, labels[start : start + cfg.batch_size]))
    return out


def _adapter_phase(state, Q_global, base, cfg, batches):
    """Run the merging phase for one epoch and return the working table."""
    scheme = cfg.scheme
    if scheme.kind == "SR":
        return Q_global.copy()
    if scheme.kind == "SM":
        return merge_models(scheme.rho, Q_global, base)

    adapter = state.adapter
    p = state.user_vec
    pooled = None
    if scheme.kind == "DM":
        # one scalar from the mean-pooled input row; the pool is over the
        # full frozen (delta, local) matrix, so it is constant this phase
        pooled = build_merge_input(Q_global, base).mean(axis=0, keepdims=True)

    for uniq, inv, labels in batches:
        base_rows = base[uniq]
        global_rows = Q_global[uniq]
        delta_rows = global_rows - base_rows
        if scheme.kind == "EM":
            cat_rows = np.concatenate([delta_rows, base_rows], axis=1)
            rho = adapter.forward(cat_rows)
            merged_rows = (1.0 - rho)[:, None] * base_rows + rho[:, None] * global_rows
        else:
            rho_s = adapter.forward(pooled)[0]
            merged_rows = (1.0 - rho_s) * base_rows + rho_s * global_rows
        z = (merged_rows @ p)[inv]
        if not np.all(np.isfinite(z)):
            raise NonFiniteLossError(f"client {state.index}: non-finite merge phase scores")
        resid = sigmoid(z) - labels
        sums = np.bincount(inv, weights=resid, minlength=len(uniq))
        proj = delta_rows @ p  # p . delta row, per unique item
        if scheme.kind == "EM":
            grads = adapter.backward(cat_rows, sums * proj)
        else:
            grads = adapter.backward(pooled, np.array([float(sums @ proj)]))
        state.opt_adapter.apply(adapter.params(), grads)

    if scheme.kind == "EM":
        rho_full = adapter.forward(build_merge_input(Q_global, base))
        return merge_models(rho_full, Q_global, base)
    rho_s = adapter.forward(pooled)[0]
    return merge_models(rho_s, Q_global, base)


def _training_epoch(state, working, cfg, batches, grad_buf):
    """One epoch of embedding updates on the working table; returns loss sums.

    ``grad_buf`` is a persistent all-zero (m, d) buffer; rows touched by a
    batch are written before the step and zeroed again after it.
    """
    p = state.user_vec
    d = working.shape[1]
    loss_sum = 0.0
    count = 0
    for uniq, inv, labels in batches:
        rows, sums, grad_p, loss = batch_terms(p, working, uniq, inv, labels)
        if not np.isfinite(loss):
            raise NonFiniteLossError(f"client {state.index}: non-finite training loss")
        grad_buf[uniq] = np.outer(sums, p)
        g_p, g_table = grad_p, grad_buf
        if cfg.ldp.enabled:
            flat = clip_gradient(
                np.concatenate([grad_p, grad_buf.ravel()]), cfg.ldp.clip
            )
            g_p = flat[:d]
            g_table = flat[d:].reshape(working.shape)
        state.opt_embed.apply([p, working], [g_p, g_table])
        grad_buf[uniq] = 0.0
        loss_sum += loss
        count += len(inv)
    return loss_sum, count


def client_update(
    state: ClientState, Q_global: np.ndarray, cfg: RoundConfig, round_index: int
) -> ClientRoundResult:
    """Run one client round and return the upload.

    On a non-finite loss the round is aborted: the state is restored and the
    previous local table is re-uploaded with a logged warning.
    """
    if Q_global.shape != state.local_table.shape:
        raise ValueError("global table shape mismatch")
    if len(state.split.train) == 0:
        raise ValueError(f"client {state.index}: empty training split")

    # the round config owns the learning rates; moments persist regardless
    state.opt_embed.lr = cfg.lr
    if state.opt_adapter is not None:
        state.opt_adapter.lr = cfg.adapter_lr

    snapshot = _snapshot_state(state)
    try:
        return _run_client_round(state, Q_global, cfg, round_index)
    except NonFiniteLossError as exc:
        _restore_state(state, snapshot)
        logger.warning("%s; round %d aborted, re-uploading previous table", exc, round_index)
        return ClientRoundResult(
            upload=state.local_table.copy(), train_loss=float("nan"), example_count=0
        )


def _run_client_round(state, Q_global, cfg, round_index):
    working = state.local_table
    grad_buf = np.zeros_like(working)
    loss_sum = 0.0
    count = 0
    for epoch in range(cfg.epochs):
        batches = _epoch_batches(state, cfg, round_index, epoch)
        merge_now = cfg.merge_schedule == "every_epoch" or epoch == 0
        if merge_now:
            working = _adapter_phase(state, Q_global, working, cfg, batches)
        ls, c = _training_epoch(state, working, cfg, batches, grad_buf)
        loss_sum += ls
        count += c
    state.local_table = working
    return ClientRoundResult(
        upload=working.copy(),
        train_loss=loss_sum / count if count else float("nan"),
        example_count=count,
    )


def client_gradient_chain(state, Q_global, items, labels):
    """Adapter gradient of the batch BCE through the merge, current state.

    The upstream d loss / d rho_i is sum over batch entries on item i of
    (rhat - r) * (p . delta_i); items absent from the batch contribute zero.
    Returns the list of parameter gradients for the adapter (EM scheme).
    """
    p = state.user_vec
    base = state.local_table
    cat = build_merge_input(Q_global, base)
    rho = state.adapter.forward(cat)
    merged = merge_models(rho, Q_global, base)
    z = merged[items] @ p
    resid = sigmoid(z) - np.asarray(labels, dtype=np.float64)
    upstream = np.zeros(base.shape[0])
    np.add.at(upstream, items, resid)
    upstream *= (Q_global - base) @ p
    return state.adapter.backward(cat, upstream)


def _snapshot_state(state):
    # the round never mutates local_table in place (phase 2 writes a fresh
    # working array), so a reference is enough for the abort path
    adapter_params = (
        [a.copy() for a in state.adapter.params()] if state.adapter else None
    )
    return (
        state.user_vec.copy(),
        state.local_table,
        adapter_params,
        _opt_snapshot(state.opt_embed),
        _opt_snapshot(state.opt_adapter),
    )


def _restore_state(state, snapshot):
    user_vec, table, adapter_params, opt_e, opt_a = snapshot
    state.user_vec[...] = user_vec
    state.local_table = table
    if adapter_params is not None:
        for dst, src in zip(state.adapter.params(), adapter_params):
            dst[...] = src
    _opt_restore(state.opt_embed, opt_e)
    _opt_restore(state.opt_adapter, opt_a)


def _opt_snapshot(opt):
    if opt is None:
        return None
    if opt.kind == "sgd":
        return (opt.step_count,)
    return (opt.step_count, [m.copy() for m in opt.m], [v.copy() for v in opt.v])


def _opt_restore(opt, snap):
    if opt is None:
        return
    opt.step_count = snap[0]
    if opt.kind == "adam":
        for dst, src in zip(opt.m, snap[1]):
            dst[...] = src
        for dst, src in zip(opt.v, snap[2]):
            dst[...] = src
