"""Training and evaluation driver: multi-task optimization, the
domain-alternating covariance-alignment schedule, and the ablation
lattice (variants A, D-H)."""

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import losses as ls
from . import metrics as mt
from .dataio import Dataset, write_checkpoint
from .errors import ConfigError
from .network import HandNet, NetworkConfig, stacked_batch

ABLATIONS = ("A", "D", "E", "F", "G", "H")

# ablation -> (embedding, multi_task, mask_loss, pose_constraints)
_ABLATION_TABLE = {
    "A": (False, False, None, False),
    "D": (True, False, None, False),
    "E": (True, True, "mse", False),
    "F": (True, True, "bce", False),
    "G": (True, True, "focal", False),
    "H": (True, True, "focal", True),
}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 24
    lr: float = 1e-3
    seed: int = 0
    val_split: float = 0.1
    grad_clip: float = 5.0
    ablation: str = "H"
    joint_loss_kind: str = "squared"
    loss_weights: ls.LossWeights = field(default_factory=ls.LossWeights)
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        if self.ablation not in _ABLATION_TABLE:
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        if not 0.0 < self.val_split < 1.0:
            raise ConfigError("val split must be in (0, 1)")
        if self.batch_size < 2 and self.loss_weights.zeta > 0:
            raise ConfigError("CORAL needs batch size >= 2")

    def resolved_network(self):
        embed, multi, _, _ = _ABLATION_TABLE[self.ablation]
        return replace(self.network, embedding_enabled=embed, multi_task=multi)

    @property
    def mask_loss_kind(self):
        return _ABLATION_TABLE[self.ablation][2]

    @property
    def pose_constraints(self):
        return _ABLATION_TABLE[self.ablation][3]


@dataclass(frozen=True)
class DomainSchedule:
    """Round-robin domain order; consecutive batches come from
    different domains."""

    domain_ids: tuple

    def __post_init__(self):
        if len(set(self.domain_ids)) < 2:
            raise ConfigError("domain schedule needs at least 2 domains")


def _check_finite(**named):
    for name, tensor in named.items():
        if tensor is not None and not torch.isfinite(tensor).all():
            raise FloatingPointError(f"non-finite value in {name}")


def prepare_tensors(samples):
    x = stacked_batch([s.csi for s in samples])
    masks = torch.as_tensor(
        np.stack([s.mask for s in samples]).astype(np.float32)
    )
    poses = torch.as_tensor(
        np.stack([s.pose for s in samples]).astype(np.float32)
    )
    return x, masks, poses


def _mask_loss(kind, logits, target, gamma_focal):
    if kind is None or logits is None:
        return None
    probs = torch.sigmoid(logits)
    if kind == "mse":
        return ((probs - target) ** 2).mean()
    if kind == "bce":
        return ls.bce_loss(probs, target)
    if kind == "focal":
        return ls.focal_mask_loss(probs, target, gamma_focal)
    raise ConfigError(f"unknown mask loss {kind!r}")


def batch_losses(model, x, masks, poses, cfg):
    """Forward pass + all enabled loss components for one batch."""
    mask_logits, pose_pred, r = model(x)
    w = cfg.loss_weights
    comp = {
        "mask": _mask_loss(cfg.mask_loss_kind, mask_logits, masks, w.gamma_focal),
        "joint": ls.joint_loss(pose_pred, poses, cfg.joint_loss_kind),
        "bl": None,
        "palmar": None,
    }
    if cfg.pose_constraints:
        comp["bl"] = ls.bone_length_loss(pose_pred)
        comp["palmar"] = ls.palmar_loss(pose_pred)
    return comp, r


def _combine(comp, coral, w):
    return ls.total_loss(comp["mask"], comp["joint"], comp["bl"],
                         comp["palmar"], coral, w)


def _split_indices(n, val_split, rng):
    idx = rng.permutation(n)
    n_val = max(1, int(round(n * val_split))) if n > 1 else 0
    return idx[n_val:], idx[:n_val]


@dataclass
class TrainResult:
    model: HandNet
    log: list
    train_metrics: dict
    val_metrics: dict


def _log_line(entry):
    return " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                    for k, v in entry.items())


def _epoch_entry(epoch, lr, comps, extra):
    entry = {"epoch": epoch, "lr": lr}
    entry.update({k: float(v) for k, v in comps.items()})
    entry.update(extra)
    return entry


def evaluate_tensors(model, x, masks, poses, cm_per_unit, batch_size=64):
    """Dataset-mean metric suite for prepared tensors."""
    model.eval()
    mpa_sum = iou_sum = mpjpe_sum = pck_sum = 0.0
    n = x.shape[0]
    threshold = mt.PckConfig.from_cm(2.0, cm_per_unit)
    has_mask = model.cfg.multi_task
    with torch.no_grad():
        for start in range(0, n, batch_size):
            xb = x[start:start + batch_size]
            mask_logits, pose_pred, _ = model(xb)
            pb = pose_pred.numpy()
            tb = poses[start:start + batch_size].numpy()
            for i in range(xb.shape[0]):
                mpjpe_sum += mt.mpjpe(pb[i], tb[i])
                pck_sum += mt.pck(pb[i], tb[i], threshold)
                if has_mask:
                    prob = torch.sigmoid(mask_logits[i]).numpy()
                    ev = mt.MaskEval.from_masks(prob, masks[start + i].numpy())
                    mpa_sum += mt.mean_pixel_accuracy(ev)[0]
                    iou_sum += mt.iou(ev)[0]
    out = {
        "mpjpe": mpjpe_sum / n,
        "mpjpe_cm": mpjpe_sum / n * cm_per_unit,
        "pck_2cm": pck_sum / n,
    }
    if has_mask:
        out["mpa"] = mpa_sum / n
        out["iou"] = iou_sum / n
    return out


def evaluate(model, dataset, batch_size=64):
    x, masks, poses = prepare_tensors(dataset.samples)
    return evaluate_tensors(model, x, masks, poses, dataset.cm_per_unit,
                            batch_size)


def train(dataset, cfg, out_path=None, log_path=None):
    """Single-domain (pooled) training loop; deterministic per seed."""
    if len(dataset.samples) == 0:
        raise ConfigError("dataset is empty")
    torch.manual_seed(cfg.seed)
    net_cfg = cfg.resolved_network()
    model = HandNet(net_cfg, seed=cfg.seed)
    x, masks, poses = prepare_tensors(dataset.samples)
    rng = np.random.default_rng(cfg.seed)
    train_idx, val_idx = _split_indices(len(dataset.samples), cfg.val_split, rng)

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.epochs)
    log = []
    for epoch in range(cfg.epochs):
        model.train()
        order = train_idx[rng.permutation(len(train_idx))]
        comps_sum, total_sum, n_batches = {}, 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            comp, _ = batch_losses(model, x[sel], masks[sel], poses[sel], cfg)
            loss = _combine(comp, None, cfg.loss_weights)
            _check_finite(total=loss, **comp)
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            for k, v in comp.items():
                if v is not None:
                    comps_sum[k] = comps_sum.get(k, 0.0) + float(v.detach())
            total_sum += float(loss.detach())
            n_batches += 1
        sched.step()
        comps_mean = {k: v / n_batches for k, v in comps_sum.items()}
        comps_mean["total"] = total_sum / n_batches
        extra = {}
        if len(val_idx):
            val_metrics = evaluate_tensors(
                model, x[val_idx], masks[val_idx], poses[val_idx],
                dataset.cm_per_unit,
            )
            extra = {f"val_{k}": v for k, v in val_metrics.items()}
        log.append(_epoch_entry(epoch, sched.get_last_lr()[0], comps_mean, extra))

    train_metrics = evaluate_tensors(model, x[train_idx], masks[train_idx],
                                     poses[train_idx], dataset.cm_per_unit)
    val_metrics = (
        evaluate_tensors(model, x[val_idx], masks[val_idx], poses[val_idx],
                         dataset.cm_per_unit)
        if len(val_idx) else {}
    )
    if log_path:
        with open(log_path, "w") as fh:
            for entry in log:
                fh.write(_log_line(entry) + "\n")
    if out_path:
        write_checkpoint(out_path, model.state_dict(), net_cfg,
                         cfg.loss_weights, cfg.seed,
                         step=cfg.epochs * max(1, len(train_idx) // cfg.batch_size))
    return TrainResult(model=model, log=log, train_metrics=train_metrics,
                       val_metrics=val_metrics)


def train_dg(dataset, cfg, schedule=None, out_path=None, log_path=None):
    """Domain-generalizing training: round-robin over source domains,
    covariance alignment between consecutive alternating batches.

    With zeta = 0 this is exactly plain training on the pooled data.
    """
    if cfg.loss_weights.zeta == 0.0:
        return train(dataset, cfg, out_path=out_path, log_path=log_path)
    by_domain = dataset.domain_split()
    if schedule is None:
        schedule = DomainSchedule(domain_ids=tuple(sorted(by_domain)))
    if any(d not in by_domain for d in schedule.domain_ids):
        raise ConfigError("schedule names a domain absent from the dataset")
    if len(set(schedule.domain_ids)) < 2:
        raise ConfigError("CORAL with zeta > 0 needs >= 2 source domains")

    torch.manual_seed(cfg.seed)
    net_cfg = cfg.resolved_network()
    model = HandNet(net_cfg, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    pools = {}
    for did in schedule.domain_ids:
        x, masks, poses = prepare_tensors(by_domain[did])
        tr, va = _split_indices(x.shape[0], cfg.val_split, rng)
        pools[did] = {"x": x, "masks": masks, "poses": poses,
                      "train": tr, "val": va}

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.epochs)
    dids = list(schedule.domain_ids)
    steps = max(
        1, min(len(p["train"]) for p in pools.values()) // cfg.batch_size
    )
    log = []
    for epoch in range(cfg.epochs):
        model.train()
        order = {d: pools[d]["train"][rng.permutation(len(pools[d]["train"]))]
                 for d in dids}
        comps_sum, total_sum, coral_sum, n_steps = {}, 0.0, 0.0, 0
        for step in range(steps):
            d1 = dids[(2 * step) % len(dids)]
            d2 = dids[(2 * step + 1) % len(dids)]
            lo = step * cfg.batch_size
            hi = lo + cfg.batch_size
            loss_terms = []
            latents = []
            comp_pair = {}
            for d in (d1, d2):
                p = pools[d]
                sel = order[d][lo:hi]
                comp, r = batch_losses(model, p["x"][sel], p["masks"][sel],
                                       p["poses"][sel], cfg)
                loss_terms.append(_combine(comp, None, cfg.loss_weights))
                latents.append(r)
                for k, v in comp.items():
                    if v is not None:
                        comp_pair[k] = comp_pair.get(k, 0.0) + 0.5 * float(v.detach())
            coral = ls.coral_loss(latents[0], latents[1])
            loss = 0.5 * (loss_terms[0] + loss_terms[1]) + cfg.loss_weights.zeta * coral
            _check_finite(total=loss, coral=coral)
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            for k, v in comp_pair.items():
                comps_sum[k] = comps_sum.get(k, 0.0) + v
            coral_sum += float(coral.detach())
            total_sum += float(loss.detach())
            n_steps += 1
        sched.step()
        comps_mean = {k: v / n_steps for k, v in comps_sum.items()}
        comps_mean["coral"] = coral_sum / n_steps
        comps_mean["total"] = total_sum / n_steps
        val_x = torch.cat([pools[d]["x"][pools[d]["val"]] for d in dids])
        val_m = torch.cat([pools[d]["masks"][pools[d]["val"]] for d in dids])
        val_p = torch.cat([pools[d]["poses"][pools[d]["val"]] for d in dids])
        extra = {}
        if val_x.shape[0]:
            val_metrics = evaluate_tensors(model, val_x, val_m, val_p,
                                           dataset.cm_per_unit)
            extra = {f"val_{k}": v for k, v in val_metrics.items()}
        log.append(_epoch_entry(epoch, sched.get_last_lr()[0], comps_mean, extra))

    if log_path:
        with open(log_path, "w") as fh:
            for entry in log:
                fh.write(_log_line(entry) + "\n")
    if out_path:
        write_checkpoint(out_path, model.state_dict(), net_cfg,
                         cfg.loss_weights, cfg.seed, step=cfg.epochs * steps)
    val_metrics = log[-1] if log else {}
    return TrainResult(model=model, log=log, train_metrics={},
                       val_metrics=val_metrics)


# reduced default used by desk-scale tests and the CLI's "small" preset
def reduced_network(mask_blocks=4):
    return NetworkConfig(
        stem_channels=12,
        block_channels=(24, 32),
        latent_dim=48,
        mask_channels=24,
        mask_residual_blocks=mask_blocks,
        pose_hidden=(96, 96),
    )


def train_config_from_dict(d):
    """Build a TrainConfig from a parsed ``key = value`` run config."""
    kwargs = {}
    for key in ("epochs", "batch_size", "seed"):
        if key in d:
            kwargs[key] = int(d[key])
    for key in ("lr", "val_split", "grad_clip"):
        if key in d:
            kwargs[key] = float(d[key])
    if "ablation" in d:
        kwargs["ablation"] = d["ablation"].strip().upper()
    if "joint_loss_kind" in d:
        kwargs["joint_loss_kind"] = d["joint_loss_kind"]
    lw_kwargs = {}
    for key in ("alpha", "beta", "gamma_pose", "lam", "zeta", "gamma_focal"):
        if key in d:
            lw_kwargs[key] = float(d[key])
    if lw_kwargs:
        kwargs["loss_weights"] = ls.LossWeights(**{**ls.LossWeights().as_dict(),
                                                   **lw_kwargs})
    if d.get("network", "default") == "reduced":
        kwargs["network"] = reduced_network()
    return TrainConfig(**kwargs)
