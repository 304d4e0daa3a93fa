"""Dense neural stack for surface-cloud property prediction.

Float64 CPU tensors throughout. The block layout is pre-norm: attention
reads a layer-normed copy of its input and adds the result back as a
residual, then the feed-forward net does the same with a second norm.
Attention logits are the scaled dot product plus three gated relational
biases: geometry (coordinate displacement or pairwise distance), scalar
property difference, and the dot product of first topology vectors.

Dropout draws come from a counter-based generator keyed by
(seed, epoch, batch, layer), so any training step can be replayed
exactly without restoring generator state.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from . import cloudstore
from .fingerprint import hash_ints

GEO_MODES = ("displacement", "distance")
TASKS = ("regression", "binary")
TOPO_EMBED_WIDTH = 32
FP_HIDDEN_WIDTH = 64
LABEL_STD_MIN = 1e-8
_KEY_MASK = (1 << 63) - 1


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; carries the epoch and batch where it happened."""

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class ModelConfig:
    n_points: int = 256
    k_nn: int = 8
    width: int = 64
    heads: int = 4
    layers: int = 2
    fp_weight: float = 0.15
    task: str = "regression"
    epochs: int = 25
    learning_rate: float = 1e-3
    seed: int = 0
    batch_size: int = 8
    dropout: float = 0.1
    geo_mode: str = "displacement"
    jitter_rot_sigma_deg: float = 5.0

    def __post_init__(self):
        if self.k_nn < 1:
            raise ValueError("k_nn must be >= 1")
        if not 0.0 <= self.fp_weight <= 1.0:
            raise ValueError("fp_weight must be in [0, 1]")
        if self.width % self.heads != 0:
            raise ValueError("width must be divisible by heads")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.geo_mode not in GEO_MODES:
            raise ValueError(f"geo_mode must be one of {GEO_MODES}")
        if self.epochs < 0 or self.batch_size < 1 or self.layers < 0:
            raise ValueError("epochs, batch_size, layers must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


def derive_key(*counters: int) -> int:
    """63-bit deterministic key from integer counters."""
    return hash_ints(*counters) & _KEY_MASK


def knn_graph(positions: np.ndarray, k: int) -> np.ndarray:
    """(N, k) neighbor indices by Euclidean distance, self excluded.

    Ties break toward the smaller index via a stable argsort.
    """
    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the point count {n}")
    diff = positions[:, None, :] - positions[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k].astype(np.int64)


def deterministic_dropout(x: torch.Tensor, rate: float, key: int) -> torch.Tensor:
    """Inverted dropout with a mask drawn from a generator seeded by key."""
    if rate <= 0.0:
        return x
    gen = torch.Generator()
    gen.manual_seed(key)
    mask = (torch.rand(x.shape, generator=gen, dtype=torch.float64) >= rate)
    return x * mask.to(x.dtype) / (1.0 - rate)


def edge_conv(x: torch.Tensor, edges: torch.Tensor, linear: nn.Linear) -> torch.Tensor:
    """y_i = elementwise max over neighbors j of ReLU(W [x_i ; x_j - x_i]).

    x is (B, F, N); edges is (B, N, k); result is (B, F', N).
    """
    b = x.shape[0]
    xt = x.transpose(1, 2)
    batch_idx = torch.arange(b).view(b, 1, 1)
    xj = xt[batch_idx, edges]
    xi = xt.unsqueeze(2).expand_as(xj)
    msg = torch.cat([xi, xj - xi], dim=-1)
    return torch.relu(linear(msg)).amax(dim=2).transpose(1, 2)


class EdgeConv(nn.Module):
    def __init__(self, in_width: int, out_width: int):
        super().__init__()
        self.linear = nn.Linear(2 * in_width, out_width)

    def forward(self, x: torch.Tensor, edges: torch.Tensor) -> torch.Tensor:
        return edge_conv(x, edges, self.linear)


def fp_blend(core_out: torch.Tensor, fp_scalar: torch.Tensor, weight: float) -> torch.Tensor:
    """Linear blend (1 - w) * core + w * fingerprint head; exact at w = 0 and 1."""
    if weight == 0.0:
        return core_out
    if weight == 1.0:
        return fp_scalar
    return (1.0 - weight) * core_out + weight * fp_scalar


class RelationalAttention(nn.Module):
    """Pre-norm multi-head attention with gated relational biases, plus FFN.

    Logit for pair (i, j), head h:
        <q_i, k_j>/sqrt(d) + s1 G + s2 E + s3 T
    with gates (s1, s2, s3) = sigmoid(gate_logits[h]), G from the geometry
    projection of P_i - P_j (or its norm), E from quant_proj(q_i - q_j),
    and T from topo_proj(<t1_i, t1_j>). At gate_logits = -inf the gates
    are exactly zero and the block reduces bitwise to vanilla attention.
    """

    def __init__(self, width: int, heads: int, dropout: float = 0.0,
                 geo_mode: str = "displacement"):
        super().__init__()
        if width % heads != 0:
            raise ValueError("width must be divisible by heads")
        if geo_mode not in GEO_MODES:
            raise ValueError(f"geo_mode must be one of {GEO_MODES}")
        self.heads = heads
        self.head_dim = width // heads
        self.geo_mode = geo_mode
        self.dropout = dropout
        self.dropout_key = 0
        self.wq = nn.Linear(width, width, bias=False)
        self.wk = nn.Linear(width, width, bias=False)
        self.wv = nn.Linear(width, width, bias=False)
        self.wo = nn.Linear(width, width, bias=False)
        self.geo_proj = nn.Linear(3 if geo_mode == "displacement" else 1, heads)
        self.quant_proj = nn.Linear(1, heads)
        self.topo_proj = nn.Linear(1, heads)
        self.gate_logits = nn.Parameter(torch.zeros(heads, 3))
        self.norm_attn = nn.LayerNorm(width)
        self.norm_ffn = nn.LayerNorm(width)
        self.ffn_in = nn.Linear(width, 4 * width)
        self.ffn_out = nn.Linear(4 * width, width)

    def bias_terms(self, pos: torch.Tensor, quant: torch.Tensor,
                   t1: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Ungated bias tensors (G, E, T), each (B, H, N, N)."""
        pt = pos.transpose(1, 2)
        disp = pt.unsqueeze(2) - pt.unsqueeze(1)
        if self.geo_mode == "distance":
            geo_in = torch.linalg.norm(disp, dim=-1, keepdim=True)
        else:
            geo_in = disp
        g = self.geo_proj(geo_in).permute(0, 3, 1, 2)
        qt = quant.transpose(1, 2)
        e = self.quant_proj(qt.unsqueeze(2) - qt.unsqueeze(1)).permute(0, 3, 1, 2)
        tt = t1.transpose(1, 2)
        tdot = (tt.unsqueeze(2) * tt.unsqueeze(1)).sum(dim=-1, keepdim=True)
        t = self.topo_proj(tdot).permute(0, 3, 1, 2)
        return g, e, t

    def forward(self, x: torch.Tensor, pos: torch.Tensor, quant: torch.Tensor,
                t1: torch.Tensor, train_mode: bool = False) -> torch.Tensor:
        """x (B, F, N), pos (B, 3, N), quant (B, 1, N), t1 (B, 3, N)."""
        xt = x.transpose(1, 2)
        h = self.norm_attn(xt)
        b, n, width = h.shape
        q = self.wq(h).view(b, n, self.heads, self.head_dim).permute(0, 2, 1, 3)
        k = self.wk(h).view(b, n, self.heads, self.head_dim).permute(0, 2, 1, 3)
        v = self.wv(h).view(b, n, self.heads, self.head_dim).permute(0, 2, 1, 3)
        logits = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        gates = torch.sigmoid(self.gate_logits)
        g, e, t = self.bias_terms(pos, quant, t1)
        logits = (logits
                  + gates[:, 0].view(1, -1, 1, 1) * g
                  + gates[:, 1].view(1, -1, 1, 1) * e
                  + gates[:, 2].view(1, -1, 1, 1) * t)
        if not torch.isfinite(logits).all():
            raise FloatingPointError("non-finite attention logits")
        attn = torch.softmax(logits, dim=-1)
        agg = (attn @ v).permute(0, 2, 1, 3).reshape(b, n, width)
        y = xt + self.wo(agg)
        z = self.norm_ffn(y)
        mid = torch.nn.functional.gelu(self.ffn_in(z))
        if train_mode:
            mid = deterministic_dropout(mid, self.dropout, self.dropout_key)
        out = y + self.ffn_out(mid)
        return out.transpose(1, 2)


class AmptcrModel(nn.Module):
    """Point-cloud property model: embed, EdgeConv x2, attention stack, pool.

    Per-point input is position (3) + surface scalar (1) + an embedded
    topology descriptor; the molecule readout concatenates max and mean
    pools. With fp_weight > 0 a fingerprint MLP head is blended in.
    """

    def __init__(self, config: ModelConfig, topo_channels: int, fp_bits: int,
                 t1_span: tuple[int, int] = (0, 3)):
        super().__init__()
        self.config = config
        self.topo_channels = topo_channels
        self.fp_bits = fp_bits
        self.t1_span = t1_span
        width = config.width
        self.topo_embed = nn.Linear(topo_channels, TOPO_EMBED_WIDTH)
        self.point_proj = nn.Linear(3 + 1 + TOPO_EMBED_WIDTH, width)
        self.edge1 = EdgeConv(width, width)
        self.edge2 = EdgeConv(width, width)
        self.attn = nn.ModuleList([
            RelationalAttention(width, config.heads, config.dropout, config.geo_mode)
            for _ in range(config.layers)
        ])
        self.readout_hidden = nn.Linear(2 * width, width)
        self.readout_out = nn.Linear(width, 1)
        self.fp_hidden = nn.Linear(fp_bits, FP_HIDDEN_WIDTH)
        self.fp_out = nn.Linear(FP_HIDDEN_WIDTH, 1)
        self.register_buffer("label_mean", torch.zeros((), dtype=torch.float64))
        self.register_buffer("label_std", torch.ones((), dtype=torch.float64))
        self.double()

    def set_dropout_keys(self, epoch: int, batch: int):
        for li, layer in enumerate(self.attn):
            layer.dropout_key = derive_key(self.config.seed, epoch, batch, li)

    def forward(self, positions: torch.Tensor, scalars: torch.Tensor,
                topo: torch.Tensor, edges: torch.Tensor, fp: torch.Tensor,
                train_mode: bool = False) -> torch.Tensor:
        """positions (B, N, 3), scalars (B, N), topo (B, N, C), edges (B, N, k),
        fp (B, nbits); returns raw per-molecule scalars (B,)."""
        feats = torch.cat([positions, scalars.unsqueeze(-1),
                           torch.relu(self.topo_embed(topo))], dim=-1)
        x = self.point_proj(feats).transpose(1, 2)
        x = self.edge1(x, edges)
        x = self.edge2(x, edges)
        pos_cf = positions.transpose(1, 2)
        quant = scalars.unsqueeze(1)
        lo, hi = self.t1_span
        t1 = topo[:, :, lo:hi].transpose(1, 2)
        for layer in self.attn:
            x = layer(x, pos_cf, quant, t1, train_mode)
        pooled = torch.cat([x.amax(dim=2), x.mean(dim=2)], dim=-1)
        core = self.readout_out(torch.relu(self.readout_hidden(pooled))).squeeze(-1)
        if self.config.fp_weight == 0.0:
            return core
        fp_scalar = self.fp_out(torch.relu(self.fp_hidden(fp))).squeeze(-1)
        return fp_blend(core, fp_scalar, self.config.fp_weight)


def init_parameters(model: AmptcrModel, seed: int):
    """Deterministic init independent of torch's global RNG.

    Linear weights are uniform in +-1/sqrt(fan_in); biases, gate logits,
    and norm offsets start at zero; norm scales at one. Parameters are
    filled in sorted-name order so the draw sequence is reproducible.
    """
    gen = torch.Generator()
    gen.manual_seed(seed & _KEY_MASK)
    with torch.no_grad():
        for name, p in sorted(model.named_parameters(), key=lambda kv: kv[0]):
            if "norm" in name:
                p.fill_(1.0 if name.endswith("weight") else 0.0)
            elif name.endswith("gate_logits") or name.endswith("bias"):
                p.zero_()
            else:
                bound = 1.0 / math.sqrt(p.shape[-1])
                p.copy_(torch.empty(p.shape, dtype=torch.float64)
                        .uniform_(-bound, bound, generator=gen))


def _check_dataset(dataset: Sequence) -> tuple[int, int, int, tuple[int, int]]:
    if not dataset:
        raise ValueError("dataset is empty")
    cloud0, fp0, _ = dataset[0]
    names0 = cloud0.layout.names
    for cloud, fp, _ in dataset:
        if cloud.layout.names != names0:
            raise ValueError("inconsistent cloud channel layouts")
        if len(cloud.positions) != len(cloud0.positions):
            raise ValueError("inconsistent point counts")
        if fp.nbits != fp0.nbits:
            raise ValueError("inconsistent fingerprint widths")
    t1_span = cloud0.layout.vector_spans[0] if cloud0.layout.vector_spans else (0, 3)
    return len(cloud0.positions), cloud0.layout.n_channels, fp0.nbits, t1_span


def _batch_tensors(samples: Sequence, k_nn: int, jitter_seeds=None,
                   rot_sigma_deg: float = 5.0) -> dict[str, torch.Tensor]:
    """Stack (cloud, fp) pairs into model inputs, jittering when seeds given."""
    positions, scalars, topo, edges, fps = [], [], [], [], []
    for i, (cloud, fp) in enumerate(samples):
        if jitter_seeds is not None:
            cloud = cloudstore.jitter(cloud, rot_sigma_deg=rot_sigma_deg,
                                      seed=jitter_seeds[i])
        positions.append(cloud.positions)
        scalars.append(cloud.scalars)
        topo.append(cloud.topo)
        edges.append(knn_graph(cloud.positions, k_nn))
        fps.append(fp.to_array().astype(np.float64))
    return {
        "positions": torch.from_numpy(np.stack(positions)),
        "scalars": torch.from_numpy(np.stack(scalars)),
        "topo": torch.from_numpy(np.stack(topo)),
        "edges": torch.from_numpy(np.stack(edges)),
        "fp": torch.from_numpy(np.stack(fps)),
    }


def train(dataset: Sequence, config: ModelConfig) -> tuple[AmptcrModel, list[float]]:
    """Fixed-epoch training loop; returns the model and per-epoch mean loss.

    dataset entries are (AmptcrCloud, Fingerprint, label). Regression
    labels are z-standardized internally; binary labels must be 0/1.
    Jitter is redrawn per batch fetch with counter-derived seeds, so a
    fixed config.seed gives a bitwise-identical loss history.
    """
    torch.set_num_threads(1)
    n_points, topo_channels, fp_bits, t1_span = _check_dataset(dataset)
    if config.k_nn >= n_points:
        raise ValueError("k_nn must be smaller than the cloud point count")
    model = AmptcrModel(config, topo_channels, fp_bits, t1_span)
    init_parameters(model, config.seed)

    labels = np.array([float(label) for _, _, label in dataset], dtype=np.float64)
    if config.task == "regression":
        std = float(labels.std())
        mean = float(labels.mean())
        if std < LABEL_STD_MIN:
            std = 1.0
        with torch.no_grad():
            model.label_mean.fill_(mean)
            model.label_std.fill_(std)
        targets_all = (labels - mean) / std
    else:
        if not np.all(np.isin(labels, (0.0, 1.0))):
            raise ValueError("binary task labels must be 0 or 1")
        targets_all = labels

    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                           betas=(0.9, 0.999))
    n = len(dataset)
    history: list[float] = []
    for epoch in range(config.epochs):
        rng = np.random.default_rng(derive_key(config.seed, epoch))
        order = rng.permutation(n)
        losses = []
        for b in range(0, n, config.batch_size):
            batch_num = b // config.batch_size
            idx = order[b:b + config.batch_size]
            seeds = [derive_key(config.seed, epoch, batch_num, int(i)) for i in idx]
            batch = _batch_tensors([(dataset[i][0], dataset[i][1]) for i in idx],
                                   config.k_nn, jitter_seeds=seeds,
                                   rot_sigma_deg=config.jitter_rot_sigma_deg)
            model.set_dropout_keys(epoch, batch_num)
            out = model(batch["positions"], batch["scalars"], batch["topo"],
                        batch["edges"], batch["fp"], train_mode=True)
            target = torch.from_numpy(targets_all[idx])
            if config.task == "regression":
                loss = torch.mean((out - target) ** 2)
            else:
                loss = torch.nn.functional.binary_cross_entropy_with_logits(out, target)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(epoch, batch_num, float(loss.detach()))
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        history.append(float(np.mean(losses)))
    return model, history


def predict(model: AmptcrModel, samples: Sequence) -> np.ndarray:
    """Inference without jitter or dropout.

    samples are (cloud, fp) pairs or (cloud, fp, label) triples.
    Regression outputs are de-standardized; binary outputs are sigmoid
    probabilities.
    """
    pairs = [(s[0], s[1]) for s in samples]
    cfg = model.config
    outs = []
    with torch.no_grad():
        for b in range(0, len(pairs), cfg.batch_size):
            batch = _batch_tensors(pairs[b:b + cfg.batch_size], cfg.k_nn)
            out = model(batch["positions"], batch["scalars"], batch["topo"],
                        batch["edges"], batch["fp"], train_mode=False)
            outs.append(out.numpy())
    raw = np.concatenate(outs)
    if cfg.task == "regression":
        return raw * float(model.label_std) + float(model.label_mean)
    return 1.0 / (1.0 + np.exp(-raw))


def grad_check(fn, params: Sequence[torch.Tensor], eps: float = 1e-5) -> float:
    """Max relative error between autograd and central finite differences.

    fn() must rebuild its graph from params on every call and return a
    scalar tensor; relative error is |a - n| / max(|a|, |n|, 1e-8).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    loss = fn()
    grads = torch.autograd.grad(loss, params, allow_unused=False)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, grads):
            flat = p.view(-1)
            gflat = g.reshape(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + eps
                hi = float(fn().detach())
                flat[i] = orig - eps
                lo = float(fn().detach())
                flat[i] = orig
                numeric = (hi - lo) / (2.0 * eps)
                analytic = float(gflat[i])
                denom = max(abs(analytic), abs(numeric), 1e-8)
                worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def model_arrays(model: AmptcrModel) -> dict[str, np.ndarray]:
    out = {name: p.detach().numpy().copy() for name, p in model.named_parameters()}
    out["label_mean"] = np.array([float(model.label_mean)])
    out["label_std"] = np.array([float(model.label_std)])
    return out


def save_model(path, model: AmptcrModel):
    meta = {
        "kind": "amptcr_model",
        "config": asdict(model.config),
        "topo_channels": model.topo_channels,
        "fp_bits": model.fp_bits,
        "t1_span": list(model.t1_span),
    }
    cloudstore.write_array_archive(path, model_arrays(model), meta)


def load_model(path) -> AmptcrModel:
    arrays, meta = cloudstore.read_array_archive(path)
    if meta.get("kind") != "amptcr_model":
        raise cloudstore.ArchiveFormatError("archive is not a model archive")
    config = ModelConfig(**meta["config"])
    model = AmptcrModel(config, int(meta["topo_channels"]), int(meta["fp_bits"]),
                        tuple(meta["t1_span"]))
    params = dict(model.named_parameters())
    with torch.no_grad():
        for name, p in params.items():
            if name not in arrays:
                raise cloudstore.ArchiveFormatError(f"missing parameter {name}")
            p.copy_(torch.from_numpy(arrays[name].astype(np.float64)).view(p.shape))
        model.label_mean.fill_(float(arrays["label_mean"][0]))
        model.label_std.fill_(float(arrays["label_std"][0]))
    return model


def history_csv(history: Sequence[float]) -> str:
    lines = ["epoch,train_loss"]
    lines += [f"{i},{loss!r}" for i, loss in enumerate(history)]
    return "\n".join(lines) + "\n"
